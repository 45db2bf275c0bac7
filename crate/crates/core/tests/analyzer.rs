mod common;

use std::collections::BTreeMap;

use common::*;
use ctf_agent::agent::{ExitStatus, Trajectory};
use ctf_agent::analyzer::{
    categorize_actions, detect_leakage, sendlines_per_session, summary_report, transition_stats,
    LeakageRule, OTHER,
};
use ctf_agent::commands::ActionCategory;
use ctf_agent::task::Category;
use proptest::prelude::*;

const FLAG: &str = "flag{l34k}";

fn solved(steps: Vec<ctf_agent::agent::Step>) -> Trajectory {
    traj("leaky", Category::Rev, steps, ExitStatus::Submitted, Some(FLAG))
}

fn soliloquy_response(extra: &str) -> String {
    format!(
        "DISCUSSION\nrun it\n```\n./a.out\n```\n{extra}\n(Open file: n/a)\n(Current directory: /x)\nbash-$\n```\nsubmit 'x'\n```\n(Interactive session: n/a)\nbash-$"
    )
}

#[test]
fn single_step_success_is_leakage() {
    let t = solved(vec![step(0, &format!("submit '{FLAG}'"), "")]);
    let v = detect_leakage(&t, &[]);
    assert!(v.applicable && v.leaked);
    assert_eq!(v.rule, Some(LeakageRule::SingleStep));
    assert_eq!(v.evidence, vec![0]);
}

#[test]
fn observed_flag_is_not_leakage() {
    let t = solved(vec![
        step(0, "decompile a.out", &format!("Decompilation Found!\nputs(\"{FLAG}\");")),
        step(1, &format!("submit '{FLAG}'"), ""),
    ]);
    let v = detect_leakage(&t, &[]);
    assert!(v.applicable && !v.leaked);
}

#[test]
fn soliloquized_flag_is_leakage() {
    let r = soliloquy_response(FLAG);
    let t = solved(vec![
        step(0, "ls", "a.out"),
        step_with_response(1, "./a.out", "Segmentation fault", &r),
        step(2, &format!("submit '{FLAG}'"), ""),
    ]);
    assert!(t.steps[1].soliloquy.is_soliloquy);
    let v = detect_leakage(&t, &[]);
    assert!(v.leaked);
    assert_eq!(v.rule, Some(LeakageRule::FlagNeverObserved));
    assert_eq!(v.evidence, vec![1]);
}

#[test]
fn flag_in_a_plain_response_is_not_rule_two() {
    let t = solved(vec![
        step(0, "ls", "a.out"),
        step_with_response(1, "echo hi", "hi", &respond(&format!("echo {FLAG}"))),
        step(2, &format!("submit '{FLAG}'"), ""),
    ]);
    assert!(!detect_leakage(&t, &[]).leaked);
}

#[test]
fn leakage_needs_a_successful_run() {
    let t = traj("x", Category::Rev, vec![step(0, "submit 'a'", "Wrong flag!")], ExitStatus::ExitCost, None);
    let v = detect_leakage(&t, &[]);
    assert!(!v.applicable && !v.leaked);
}

#[test]
fn exempt_challenges_are_skipped() {
    let t = solved(vec![step(0, &format!("submit '{FLAG}'"), "")]);
    assert!(!detect_leakage(&t, &["leaky".into()]).applicable);
}

proptest! {
    #[test]
    fn adding_the_flag_to_an_observation_never_creates_leakage(
        n in 1usize..6,
        at in 0usize..6,
        solil in any::<bool>(),
    ) {
        let mut steps: Vec<_> = (0..n).map(|i| step(i, "ls", "x")).collect();
        if solil && n >= 2 {
            steps[n - 2] = step_with_response(n - 2, "./a.out", "x", &soliloquy_response(FLAG));
        }
        let before = detect_leakage(&solved(steps.clone()), &[]);
        let i = at % n;
        steps[i].observation.push_str(FLAG);
        let after = detect_leakage(&solved(steps), &[]);
        prop_assert!(!after.leaked || before.leaked);
        prop_assert!(!after.leaked);
    }
}

#[test]
fn action_categories() {
    let t = traj(
        "x",
        Category::Pwn,
        vec![
            step(0, "connect_sendline 'AAAA'", ""),
            step(1, "debug_step", ""),
            step(2, "python solve.py", ""),
            step(3, "decompile a.out", ""),
            step(4, "open a.c", ""),
            step(5, "exit_forfeit", ""),
        ],
        ExitStatus::ExitForfeit,
        None,
    );
    let h = categorize_actions(&t);
    assert_eq!(h[&ActionCategory::INetwork], 1);
    assert_eq!(h[&ActionCategory::Debug], 1);
    assert_eq!(h[&ActionCategory::Shell], 1);
    assert_eq!(h[&ActionCategory::StaticAnalysis], 1);
    assert_eq!(h[&ActionCategory::FileViewEdit], 1);
    assert_eq!(h[&ActionCategory::Task], 1);
    assert_eq!(h.values().sum::<usize>(), t.steps.len());
}

fn corpus(actions: &[&[&str]]) -> Vec<Trajectory> {
    actions
        .iter()
        .map(|seq| {
            let steps = seq.iter().enumerate().map(|(i, a)| step(i, a, "")).collect();
            traj("c", Category::Rev, steps, ExitStatus::EarlyExit, None)
        })
        .collect()
}

#[test]
fn breakpoint_continue_fixture() {
    let c = corpus(&[
        &["debug_start a", "debug_add_breakpoint main", "debug_continue", "debug_exec 'x/s $rdi'"],
        &["debug_add_breakpoint check", "debug_continue", "debug_stop"],
        &["debug_add_breakpoint *0x401000", "debug_continue"],
        &["debug_add_breakpoint f", "debug_exec 'info registers'"],
    ]);
    let s = transition_stats(&c, Some(ActionCategory::Debug));
    assert_eq!(s.probability("debug_add_breakpoint", "debug_continue"), Some(0.75));
    assert_eq!(s.count("debug_add_breakpoint", "debug_exec"), 1);
}

#[test]
fn other_bucket_and_single_actions() {
    let c = corpus(&[&["debug_continue", "ls", "debug_continue"]]);
    let s = transition_stats(&c, Some(ActionCategory::Debug));
    assert_eq!(s.probability("debug_continue", OTHER), Some(1.0));
    assert_eq!(s.transitions.len(), 1);
    let single = corpus(&[&["debug_step"], &["debug_continue"]]);
    assert!(transition_stats(&single, Some(ActionCategory::Debug)).transitions.is_empty());
    assert!(transition_stats(&single, None).transitions.is_empty());
}

const VOCAB: [&str; 10] = [
    "debug_add_breakpoint main",
    "debug_continue",
    "debug_step 2",
    "debug_exec 'bt'",
    "debug_start a.out",
    "connect_sendline hi",
    "ls -la",
    "python3 s.py",
    "open s.py",
    "cat x",
];

/// Independent tally over index pairs, with its own idea of which words
/// are debug verbs.
fn brute_force(seqs: &[Vec<usize>], debug_only: bool) -> BTreeMap<(String, String), usize> {
    let word = |i: usize| VOCAB[i].split(' ').next().unwrap().to_string();
    let is_debug = |i: usize| word(i).starts_with("debug_");
    let mut m = BTreeMap::new();
    for seq in seqs {
        let mut k = 0;
        while k + 1 < seq.len() {
            let (a, b) = (seq[k], seq[k + 1]);
            k += 1;
            if debug_only && !is_debug(a) {
                continue;
            }
            let to = if debug_only && !is_debug(b) { "<other>".to_string() } else { word(b) };
            *m.entry((word(a), to)).or_insert(0) += 1;
        }
    }
    m
}

fn split_corpus() -> impl Strategy<Value = Vec<Vec<usize>>> {
    (
        prop::collection::vec(0..VOCAB.len(), 1000),
        prop::collection::vec(1usize..60, 1..40),
    )
        .prop_map(|(flat, cuts)| {
            let mut out = Vec::new();
            let mut rest = &flat[..];
            for c in cuts {
                if rest.is_empty() {
                    break;
                }
                let n = c.min(rest.len());
                out.push(rest[..n].to_vec());
                rest = &rest[n..];
            }
            if !rest.is_empty() {
                out.push(rest.to_vec());
            }
            out
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn transitions_match_brute_force(seqs in split_corpus(), debug_only in any::<bool>()) {
        prop_assert_eq!(seqs.iter().map(Vec::len).sum::<usize>(), 1000);
        let trajs: Vec<Trajectory> = seqs
            .iter()
            .map(|s| {
                let steps = s.iter().enumerate().map(|(i, &v)| step(i, VOCAB[v], "")).collect();
                traj("c", Category::Rev, steps, ExitStatus::EarlyExit, None)
            })
            .collect();
        let filter = debug_only.then_some(ActionCategory::Debug);
        let stats = transition_stats(&trajs, filter);
        let oracle = brute_force(&seqs, debug_only);
        let got: BTreeMap<(String, String), usize> = stats
            .transitions
            .iter()
            .map(|t| ((t.from.clone(), t.to.clone()), t.count))
            .collect();
        prop_assert_eq!(&got, &oracle);
        let mut rows: BTreeMap<&str, f64> = BTreeMap::new();
        for t in &stats.transitions {
            *rows.entry(&t.from).or_default() += t.probability;
            let row_total: usize = oracle.iter().filter(|((f, _), _)| *f == t.from).map(|(_, c)| c).sum();
            prop_assert!((t.probability - t.count as f64 / row_total as f64).abs() < 1e-12);
        }
        for total in rows.values() {
            prop_assert!((total - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn sendlines_per_connect_session() {
    let mut steps = vec![step(0, "connect_start h 1", "")];
    steps.extend((1..=3).map(|i| step(i, "connect_sendline a", "")));
    steps.push(step(4, "connect_stop", ""));
    steps.push(step(5, "connect_start h 1\nconnect_sendline a\nconnect_sendline b", ""));
    steps.push(step(6, "connect_start h 2", "Interactive session already open."));
    steps.push(step(7, "connect_sendline c", ""));
    steps.push(step(8, "connect_sendline d", "COMMAND FAILED TO EXECUTE. TERMINATING INTERACTIVE SESSION."));
    steps.push(step(9, "connect_start h 1", ""));
    steps.extend((10..14).map(|i| step(i, "connect_sendline x", "")));
    let t = traj("net", Category::Pwn, steps, ExitStatus::EarlyExit, None);
    assert_eq!(sendlines_per_session(&t), vec![3, 4, 4]);
    let r = summary_report(&[t]);
    assert_eq!(r.connect_sessions, 3);
    assert!((r.sendlines_per_connect_mean.unwrap() - 11.0 / 3.0).abs() < 1e-12);
    assert_eq!(format!("{:.2}", r.sendlines_per_connect_mean.unwrap()), "3.67");
}

#[test]
fn all_failed_corpus() {
    let c = vec![
        traj("a", Category::Web, vec![step(0, "ls", "")], ExitStatus::ExitCost, None),
        traj("b", Category::Web, vec![step(0, "ls", ""), step(1, "ls", "")], ExitStatus::ExitForfeit, None),
    ];
    let r = summary_report(&c);
    assert!(r.turns_solved.is_empty());
    assert_eq!(r.turns_failed, BTreeMap::from([(1, 1), (2, 1)]));
    assert_eq!(r.cost_by_category[&Category::Web].cost_per_solved, None);
    assert_eq!(r.exit_status[&ExitStatus::ExitCost], 1);
    assert_eq!(r.exit_status[&ExitStatus::Submitted], 0);
}

#[test]
fn report_totals_agree_with_per_category_sums() {
    let mut c = Vec::new();
    let cats = [Category::Crypto, Category::Rev, Category::Pwn, Category::Misc];
    for (k, cat) in cats.iter().cycle().take(13).enumerate() {
        let steps: Vec<_> = (0..(k % 5 + 1))
            .map(|i| step(i, VOCAB[(i * 7 + k) % VOCAB.len()], ""))
            .collect();
        let (status, sub) = if k % 3 == 0 {
            (ExitStatus::Submitted, Some("flag{x}"))
        } else {
            (ExitStatus::EarlyExit, None)
        };
        let mut t = traj(&format!("c{k}"), *cat, steps, status, sub);
        t.footer.as_mut().unwrap().ledger.dollars = 0.1 * (k as f64 + 1.0);
        c.push(t);
    }
    let r = summary_report(&c);
    let total_steps: usize = c.iter().map(|t| t.steps.len()).sum();
    assert_eq!(r.total_steps, total_steps);
    assert_eq!(r.actions.values().sum::<usize>(), total_steps);
    for a in ActionCategory::ALL {
        let per_cat: usize = r.actions_by_challenge_category.values().map(|h| h[&a]).sum();
        assert_eq!(per_cat, r.actions[&a]);
    }
    assert_eq!(r.exit_status.values().sum::<usize>(), c.len());
    assert_eq!(r.cost_by_category.values().map(|x| x.runs).sum::<usize>(), c.len());
    assert_eq!(r.cost_by_category.values().map(|x| x.solved).sum::<usize>(), r.solved);
    assert_eq!(r.turns_solved.values().sum::<usize>() + r.turns_failed.values().sum::<usize>(), c.len());
    let solved_dollars: f64 = c.iter().filter(|t| t.solved()).map(|t| t.dollars()).sum();
    let by_cat: f64 = r.cost_by_category.values().map(|x| x.dollars_solved).sum();
    assert!((solved_dollars - by_cat).abs() < 1e-9);
    assert!(r.to_text().contains("exit status:"));
}
