//! Offline trajectory forensics. Reads trajectories, never writes them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::agent::{split_action, ExitStatus, Trajectory};
use crate::commands::{self, ActionCategory};
use crate::iat::{Tool, SESSION_FAILED};
use crate::task::Category;

/// Successor name used when the next action falls outside the filter.
pub const OTHER: &str = "<other>";

pub type Histogram = BTreeMap<ActionCategory, usize>;

pub fn categorize_actions(traj: &Trajectory) -> Histogram {
    let mut h: Histogram = ActionCategory::ALL.iter().map(|&c| (c, 0)).collect();
    for step in &traj.steps {
        *h.entry(commands::categorize(&step.action)).or_default() += 1;
    }
    h
}

/// Verbs that are not registered commands, with their counts.
pub fn unregistered_verbs(traj: &Trajectory) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for step in &traj.steps {
        let v = commands::verb(&step.action);
        if !v.is_empty() && commands::lookup(v).is_none() {
            *out.entry(v.to_string()).or_default() += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakageRule {
    SingleStep,
    FlagNeverObserved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageVerdict {
    /// False for runs that did not submit and for exempt challenges.
    pub applicable: bool,
    pub leaked: bool,
    pub rule: Option<LeakageRule>,
    pub evidence: Vec<usize>,
}

impl LeakageVerdict {
    fn not_applicable() -> Self {
        LeakageVerdict {
            applicable: false,
            leaked: false,
            rule: None,
            evidence: Vec::new(),
        }
    }
}

/// Flags a successful run as probable leakage when it took a single step,
/// or when the flag never showed up in any observation but does appear in
/// the soliloquizing second-to-last response. `exempt` names challenges
/// whose statement contains the flag.
pub fn detect_leakage(traj: &Trajectory, exempt: &[String]) -> LeakageVerdict {
    let Some(flag) = traj
        .footer
        .as_ref()
        .filter(|f| f.exit_status == ExitStatus::Submitted)
        .and_then(|f| f.submission.as_deref())
        .filter(|f| !f.is_empty())
    else {
        return LeakageVerdict::not_applicable();
    };
    if exempt.contains(&traj.header.challenge.name) {
        return LeakageVerdict::not_applicable();
    }
    let mut verdict = LeakageVerdict {
        applicable: true,
        leaked: false,
        rule: None,
        evidence: Vec::new(),
    };
    if traj.steps.iter().any(|s| s.observation.contains(flag)) {
        return verdict;
    }
    let n = traj.steps.len();
    if n == 1 {
        verdict.leaked = true;
        verdict.rule = Some(LeakageRule::SingleStep);
        verdict.evidence = vec![traj.steps[0].index];
    } else if n >= 2 {
        let s = &traj.steps[n - 2];
        if s.raw_response.contains(flag) && s.soliloquy.is_soliloquy {
            verdict.leaked = true;
            verdict.rule = Some(LeakageRule::FlagNeverObserved);
            verdict.evidence = vec![s.index];
        }
    }
    verdict
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub from: String,
    pub to: String,
    pub count: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TransitionStats {
    pub filter: Option<ActionCategory>,
    pub transitions: Vec<Transition>,
}

impl TransitionStats {
    pub fn probability(&self, from: &str, to: &str) -> Option<f64> {
        self.transitions
            .iter()
            .find(|t| t.from == from && t.to == to)
            .map(|t| t.probability)
    }

    pub fn count(&self, from: &str, to: &str) -> usize {
        self.transitions
            .iter()
            .find(|t| t.from == from && t.to == to)
            .map_or(0, |t| t.count)
    }
}

/// First-order transitions between consecutive actions. With a filter,
/// only actions of that category are sources; successors outside it are
/// pooled as [`OTHER`].
pub fn transition_stats(trajs: &[Trajectory], filter: Option<ActionCategory>) -> TransitionStats {
    let keep = |a: &str| filter.is_none_or(|c| commands::categorize(a) == c);
    let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
    for t in trajs {
        for pair in t.steps.windows(2) {
            let (a, b) = (&pair[0].action, &pair[1].action);
            if !keep(a) {
                continue;
            }
            let to = if keep(b) { commands::verb(b) } else { OTHER };
            *counts
                .entry((commands::verb(a).to_string(), to.to_string()))
                .or_default() += 1;
        }
    }
    let mut rows: BTreeMap<&str, usize> = BTreeMap::new();
    for ((from, _), c) in &counts {
        *rows.entry(from).or_default() += c;
    }
    let transitions = counts
        .iter()
        .map(|((from, to), &count)| Transition {
            from: from.clone(),
            to: to.clone(),
            count,
            probability: count as f64 / rows[from.as_str()] as f64,
        })
        .collect();
    TransitionStats {
        filter,
        transitions,
    }
}

/// `connect_sendline` counts for each connection session in a trajectory.
/// A start while any session is open is treated as refused.
pub fn sendlines_per_session(traj: &Trajectory) -> Vec<usize> {
    let mut sessions = Vec::new();
    let mut open: Option<(Tool, usize)> = None;
    for step in &traj.steps {
        for unit in split_action(&step.action) {
            match (commands::verb(&unit), open.as_mut()) {
                ("connect_start", None) => open = Some((Tool::Connect, 0)),
                ("debug_start", None) => open = Some((Tool::Debug, 0)),
                ("connect_sendline", Some((Tool::Connect, n))) => *n += 1,
                ("connect_stop", Some((Tool::Connect, n))) => {
                    sessions.push(*n);
                    open = None;
                }
                ("debug_stop", Some((Tool::Debug, _))) => open = None,
                _ => {}
            }
        }
        if step.observation.contains(SESSION_FAILED) {
            if let Some((Tool::Connect, n)) = open {
                sessions.push(n);
            }
            open = None;
        }
    }
    if let Some((Tool::Connect, n)) = open {
        sessions.push(n);
    }
    sessions
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CategoryCost {
    pub runs: usize,
    pub solved: usize,
    pub dollars_solved: f64,
    /// Mean dollars per solved run.
    pub cost_per_solved: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub runs: usize,
    pub solved: usize,
    /// Runs without a footer (interrupted).
    pub unfinished: usize,
    pub exit_status: BTreeMap<ExitStatus, usize>,
    /// Turns to histogram count, split by outcome.
    pub turns_solved: BTreeMap<usize, usize>,
    pub turns_failed: BTreeMap<usize, usize>,
    pub total_steps: usize,
    pub soliloquy_steps: usize,
    pub soliloquy_step_fraction: f64,
    pub connect_sessions: usize,
    pub sendlines_per_connect_mean: Option<f64>,
    pub actions: Histogram,
    pub actions_by_challenge_category: BTreeMap<Category, Histogram>,
    pub cost_by_category: BTreeMap<Category, CategoryCost>,
    pub total_dollars: f64,
    /// Verbs outside the command registry, counted as shell.
    pub unregistered_verbs: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub leakage: Vec<(String, LeakageVerdict)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transitions: Option<TransitionStats>,
}

pub fn summary_report(trajs: &[Trajectory]) -> Report {
    let mut r = Report {
        runs: trajs.len(),
        exit_status: ExitStatus::ALL.iter().map(|&s| (s, 0)).collect(),
        actions: ActionCategory::ALL.iter().map(|&c| (c, 0)).collect(),
        ..Default::default()
    };
    let mut sessions = Vec::new();
    for t in trajs {
        let turns = t.steps.len();
        let category = t.header.challenge.category;
        match t.exit_status() {
            Some(s) => *r.exit_status.entry(s).or_default() += 1,
            None => r.unfinished += 1,
        }
        let cost = r.cost_by_category.entry(category).or_default();
        cost.runs += 1;
        if t.solved() {
            r.solved += 1;
            cost.solved += 1;
            cost.dollars_solved += t.dollars();
            *r.turns_solved.entry(turns).or_default() += 1;
        } else {
            *r.turns_failed.entry(turns).or_default() += 1;
        }
        r.total_dollars += t.dollars();
        r.total_steps += turns;
        r.soliloquy_steps += t.steps.iter().filter(|s| s.soliloquy.is_soliloquy).count();
        let h = categorize_actions(t);
        let by_cat = r
            .actions_by_challenge_category
            .entry(category)
            .or_insert_with(|| ActionCategory::ALL.iter().map(|&c| (c, 0)).collect());
        for (c, n) in h {
            *r.actions.entry(c).or_default() += n;
            *by_cat.entry(c).or_default() += n;
        }
        for (v, n) in unregistered_verbs(t) {
            *r.unregistered_verbs.entry(v).or_default() += n;
        }
        sessions.extend(sendlines_per_session(t));
    }
    for c in r.cost_by_category.values_mut() {
        c.cost_per_solved = (c.solved > 0).then(|| c.dollars_solved / c.solved as f64);
    }
    if r.total_steps > 0 {
        r.soliloquy_step_fraction = r.soliloquy_steps as f64 / r.total_steps as f64;
    }
    r.connect_sessions = sessions.len();
    if !sessions.is_empty() {
        r.sendlines_per_connect_mean =
            Some(sessions.iter().sum::<usize>() as f64 / sessions.len() as f64);
    }
    r
}

impl Report {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "runs: {}  solved: {}  unfinished: {}", self.runs, self.solved, self.unfinished);
        let _ = writeln!(s, "total cost: ${:.4}", self.total_dollars);
        let _ = writeln!(s, "\nexit status:");
        for (k, v) in &self.exit_status {
            let _ = writeln!(s, "  {k:<18}{v}");
        }
        let _ = writeln!(s, "\nturns (solved / failed):");
        let turns: BTreeSet<usize> = self
            .turns_solved
            .keys()
            .chain(self.turns_failed.keys())
            .copied()
            .collect();
        for t in turns {
            let ok = self.turns_solved.get(&t).copied().unwrap_or(0);
            let bad = self.turns_failed.get(&t).copied().unwrap_or(0);
            let _ = writeln!(s, "  {t:>4}  {ok:>4}  {bad:>4}");
        }
        let _ = writeln!(s, "\nactions ({} steps):", self.total_steps);
        for (k, v) in &self.actions {
            let _ = writeln!(s, "  {:<18}{v}", k.as_str());
        }
        let _ = writeln!(
            s,
            "\nsoliloquy steps: {} ({:.1}%)",
            self.soliloquy_steps,
            100.0 * self.soliloquy_step_fraction
        );
        match self.sendlines_per_connect_mean {
            Some(m) => {
                let _ = writeln!(s, "sendlines per connect session: {m:.2} over {} sessions", self.connect_sessions);
            }
            None => {
                let _ = writeln!(s, "sendlines per connect session: n/a");
            }
        }
        let _ = writeln!(s, "\ncost per solved run by category:");
        for (k, c) in &self.cost_by_category {
            match c.cost_per_solved {
                Some(d) => {
                    let _ = writeln!(s, "  {:<10}${d:.4} ({}/{} solved)", k.as_str(), c.solved, c.runs);
                }
                None => {
                    let _ = writeln!(s, "  {:<10}n/a (0/{} solved)", k.as_str(), c.runs);
                }
            }
        }
        if !self.leakage.is_empty() {
            let _ = writeln!(s, "\nleakage:");
            for (name, v) in &self.leakage {
                let status = match (v.applicable, v.rule) {
                    (false, _) => "n/a".to_string(),
                    (true, None) => "clean".to_string(),
                    (true, Some(rule)) => format!("leaked ({rule:?}) at steps {:?}", v.evidence),
                };
                let _ = writeln!(s, "  {name}: {status}");
            }
        }
        if let Some(t) = &self.transitions {
            let label = t.filter.map_or("all", |c| c.as_str());
            let _ = writeln!(s, "\ntransitions ({label}):");
            for tr in &t.transitions {
                let _ = writeln!(s, "  {} -> {}  {}  {:.3}", tr.from, tr.to, tr.count, tr.probability);
            }
        }
        if !self.unregistered_verbs.is_empty() {
            let verbs: Vec<String> = self
                .unregistered_verbs
                .iter()
                .map(|(k, v)| format!("{k}({v})"))
                .collect();
            let _ = writeln!(s, "\nunregistered verbs counted as shell: {}", verbs.join(" "));
        }
        s
    }
}
