//! The run controller: query, parse, dispatch, observe, summarize, repeat.

mod trajectory;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub use trajectory::{Footer, Header, Record, Trajectory, TrajectoryWriter};

use crate::commands;
use crate::iat::{is_iat_verb, translate_command};
use crate::model::{
    assemble_context, estimate_messages, ChatModel, CostLedger, HistoryPolicy, ModelConfig,
    Usage,
};
use crate::parser::{
    detect_soliloquy_with, parse_response, truncate_after_first_action, MarkerCounting,
    SoliloquyReport,
};
use crate::sandbox::{EnvError, Environment, Sentinel, ShellState};
use crate::summarizer::{Summarizer, SummarizerConfig};
use crate::task::{verify_flag, Challenge};
use crate::templates::{render_prompts, Templates};

pub const WRONG_FLAG: &str = "Wrong flag!";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Submitted,
    ExitCost,
    ExitContext,
    ExitForfeit,
    ExitFormat,
    ExitAgentError,
    EarlyExit,
}

impl ExitStatus {
    pub const ALL: [ExitStatus; 7] = [
        ExitStatus::Submitted,
        ExitStatus::ExitCost,
        ExitStatus::ExitContext,
        ExitStatus::ExitForfeit,
        ExitStatus::ExitFormat,
        ExitStatus::ExitAgentError,
        ExitStatus::EarlyExit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExitStatus::Submitted => "submitted",
            ExitStatus::ExitCost => "exit_cost",
            ExitStatus::ExitContext => "exit_context",
            ExitStatus::ExitForfeit => "exit_forfeit",
            ExitStatus::ExitFormat => "exit_format",
            ExitStatus::ExitAgentError => "exit_agent_error",
            ExitStatus::EarlyExit => "early_exit",
        }
    }
}

impl std::fmt::Display for ExitStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub thought: String,
    pub action: String,
    /// Model text exactly as received.
    pub raw_response: String,
    /// What the model is shown as its own turn (truncated in truncation mode).
    pub response: String,
    /// Observation after summarization, without the state lines.
    pub observation: String,
    /// State after the action.
    pub state: ShellState,
    pub usage: Usage,
    pub soliloquy: SoliloquyReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summarizer_usage: Option<Usage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exchange: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub max_turns: usize,
    pub budget: f64,
    pub include_iat: bool,
    pub truncate_soliloquies: bool,
    pub marker_counting: MarkerCounting,
    /// Consecutive malformed responses that end the run.
    pub format_error_limit: usize,
    pub history: HistoryPolicy,
    pub summarizer: SummarizerConfig,
    pub templates_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            max_turns: 40,
            budget: crate::model::DEFAULT_BUDGET,
            include_iat: true,
            truncate_soliloquies: false,
            marker_counting: MarkerCounting::Total,
            format_error_limit: 2,
            history: HistoryPolicy::default(),
            summarizer: SummarizerConfig::default(),
            templates_dir: None,
        }
    }
}

impl RunConfig {
    pub fn templates(&self) -> std::io::Result<Templates> {
        match &self.templates_dir {
            Some(dir) => Templates::load(dir),
            None => Ok(Templates::default()),
        }
    }
}

/// The recorded configuration. Backend wiring (kind, paths, endpoint, keys)
/// is left out so that a replay of a run records the same header.
pub fn recorded_config(run: &RunConfig, model: &ModelConfig) -> Value {
    json!({
        "run": run,
        "model": {
            "model_name": model.model_name,
            "temperature": model.temperature,
            "top_p": model.top_p,
            "price_in": model.price_in,
            "price_out": model.price_out,
            "context_limit": model.context_limit,
            "max_tokens": model.max_tokens,
        },
    })
}

pub fn fingerprint(config: &Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Control {
    Continue,
    Terminate(ExitStatus),
}

/// Splits an action into the units that are dispatched one after another.
/// Interactive-tool commands stand alone; runs of other lines stay together
/// so heredocs and multi-line shell constructs reach the shell intact.
pub fn split_action(action: &str) -> Vec<String> {
    let mut units = Vec::new();
    let mut shell: Vec<&str> = Vec::new();
    let mut in_body: Option<&str> = None;
    for line in action.lines() {
        if let Some(end) = in_body {
            shell.push(line);
            if line.trim() == end {
                in_body = None;
            }
            continue;
        }
        let verb = commands::verb(line);
        if is_iat_verb(verb) {
            if !shell.is_empty() {
                units.push(shell.join("\n"));
                shell.clear();
            }
            units.push(line.trim().to_string());
            continue;
        }
        in_body = commands::lookup(verb).and_then(|c| c.end_name);
        shell.push(line);
    }
    if !shell.is_empty() {
        let joined = shell.join("\n");
        if !joined.trim().is_empty() {
            units.push(joined);
        }
    }
    units
}

fn append(obs: &mut String, text: &str) {
    if !obs.is_empty() && !text.is_empty() {
        obs.push('\n');
    }
    obs.push_str(text);
}

/// Result of one dispatched action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dispatched {
    pub observation: String,
    pub control: Control,
    /// The candidate that was accepted, when the run ends submitted.
    pub submission: Option<String>,
}

/// Routes one action. Interactive-tool verbs go to the session manager,
/// everything else to the main shell; submit and forfeit arrive as sentinel
/// lines in shell output. Only a dead shell is an error.
pub fn dispatch_action(
    action: &str,
    env: &mut Environment,
    challenge: &Challenge,
) -> Result<Dispatched, EnvError> {
    let mut observation = String::new();
    for unit in split_action(action) {
        if let Ok(directive) = translate_command(&unit) {
            let text = env.iat_dispatch(&directive);
            append(&mut observation, &text);
            continue;
        }
        let result = env.exec(&unit)?;
        let shown = result.output.trim_end_matches('\n');
        let only_sentinels = shown.trim().is_empty() && !result.sentinels.is_empty();
        if !only_sentinels {
            append(&mut observation, shown);
        }
        for s in result.sentinels {
            match s {
                Sentinel::Submit(candidate) => {
                    let verdict = verify_flag(&challenge.flag, &candidate);
                    if verdict.correct {
                        return Ok(Dispatched {
                            observation,
                            control: Control::Terminate(ExitStatus::Submitted),
                            submission: Some(verdict.normalized_candidate),
                        });
                    }
                    append(&mut observation, WRONG_FLAG);
                }
                Sentinel::Forfeit => {
                    return Ok(Dispatched {
                        observation,
                        control: Control::Terminate(ExitStatus::ExitForfeit),
                        submission: None,
                    });
                }
            }
        }
    }
    if observation.is_empty() {
        observation = crate::sandbox::EMPTY_OUTPUT.to_string();
    }
    Ok(Dispatched {
        observation,
        control: Control::Continue,
        submission: None,
    })
}

/// Everything an episode needs besides the environment.
pub struct Episode<'a> {
    pub challenge: &'a Challenge,
    pub model: &'a mut dyn ChatModel,
    /// Model used by the lm summarizer; lm mode falls back without one.
    pub summarizer_model: Option<&'a mut dyn ChatModel>,
    pub model_cfg: &'a ModelConfig,
    pub run_cfg: &'a RunConfig,
    pub templates: &'a Templates,
}

struct Outcome {
    status: ExitStatus,
    submission: Option<String>,
    error: Option<String>,
}

impl Outcome {
    fn status(status: ExitStatus) -> Self {
        Outcome {
            status,
            submission: None,
            error: None,
        }
    }

    fn error(msg: impl Into<String>) -> Self {
        Outcome {
            status: ExitStatus::ExitAgentError,
            submission: None,
            error: Some(msg.into()),
        }
    }
}

pub fn make_header(challenge: &Challenge, run: &RunConfig, model: &ModelConfig) -> Header {
    let config = recorded_config(run, model);
    Header {
        challenge: challenge.info.clone(),
        challenge_dir: challenge.dir.display().to_string(),
        config_fingerprint: fingerprint(&config),
        config,
    }
}

/// Runs one episode to its end, appending every record to `out`.
pub fn run_episode(
    ep: Episode<'_>,
    env: &mut Environment,
    out: &mut TrajectoryWriter,
) -> Trajectory {
    let header = make_header(ep.challenge, ep.run_cfg, ep.model_cfg);
    if let Err(e) = out.write(&Record::Header(header.clone())) {
        tracing::warn!("writing trajectory header: {e}");
    }
    let mut ledger = CostLedger::new(ep.run_cfg.budget, ep.model_cfg.price_in, ep.model_cfg.price_out);
    let mut steps: Vec<Step> = Vec::new();
    let outcome = episode_loop(ep, env, out, &mut ledger, &mut steps);
    let footer = Footer {
        exit_status: outcome.status,
        ledger,
        steps: steps.len(),
        submission: outcome.submission,
        error: outcome.error,
    };
    if let Err(e) = out.write(&Record::Footer(footer.clone())) {
        tracing::warn!("writing trajectory footer: {e}");
    }
    Trajectory {
        header,
        steps,
        footer: Some(footer),
    }
}

fn episode_loop(
    mut ep: Episode<'_>,
    env: &mut Environment,
    out: &mut TrajectoryWriter,
    ledger: &mut CostLedger,
    steps: &mut Vec<Step>,
) -> Outcome {
    let cfg = ep.run_cfg;
    let mut summarizer = Summarizer::new(cfg.summarizer.clone(), ep.templates.clone());
    let prompts = render_prompts(ep.templates, &ep.challenge.info, &env.state(), cfg.include_iat);
    let mut format_errors = 0;
    for index in 0..cfg.max_turns {
        if !ledger.can_query() {
            return Outcome::status(ExitStatus::ExitCost);
        }
        let messages = assemble_context(ep.templates, &prompts, steps, &cfg.history);
        if estimate_messages(&messages) > ep.model_cfg.context_limit {
            return Outcome::status(ExitStatus::ExitContext);
        }
        let reply = match ep.model.query(&messages) {
            Ok(r) => r,
            Err(e) => return Outcome::error(e.to_string()),
        };
        let _ = ledger.charge(reply.usage);
        let soliloquy = detect_soliloquy_with(&reply.text, cfg.marker_counting);
        let response = if cfg.truncate_soliloquies {
            truncate_after_first_action(&reply.text).to_string()
        } else {
            reply.text.clone()
        };
        let mut step = Step {
            index,
            thought: String::new(),
            action: String::new(),
            raw_response: reply.text.clone(),
            response: response.clone(),
            observation: String::new(),
            state: env.state(),
            usage: reply.usage,
            soliloquy,
            summarizer_usage: None,
            exchange: reply.exchange,
        };
        let mut control = Control::Continue;
        let mut submission = None;
        match parse_response(&response) {
            Err(fe) => {
                format_errors += 1;
                step.thought = response.clone();
                step.observation = fe.observation;
                if format_errors >= cfg.format_error_limit {
                    control = Control::Terminate(ExitStatus::ExitFormat);
                }
            }
            Ok(parsed) => {
                format_errors = 0;
                step.thought = parsed.thought;
                step.action = parsed.action;
                let d = match dispatch_action(&step.action, env, ep.challenge) {
                    Ok(d) => d,
                    Err(e) => {
                        step.observation = e.to_string();
                        write_step(out, &step);
                        steps.push(step);
                        return Outcome::error(e.to_string());
                    }
                };
                control = d.control;
                submission = d.submission;
                let lm: Option<&mut dyn ChatModel> = match ep.summarizer_model {
                    Some(ref mut m) => Some(&mut **m),
                    None => None,
                };
                let summary = summarizer.summarize(
                    &d.observation,
                    &step.action,
                    &ep.challenge.info,
                    env,
                    lm,
                );
                if let Some(u) = summary.usage {
                    let _ = ledger.charge(u);
                }
                step.summarizer_usage = summary.usage;
                step.observation = summary.text;
                step.state = env.state();
            }
        }
        write_step(out, &step);
        steps.push(step);
        if let Control::Terminate(status) = control {
            return Outcome {
                status,
                submission,
                error: None,
            };
        }
    }
    Outcome::status(ExitStatus::EarlyExit)
}

fn write_step(out: &mut TrajectoryWriter, step: &Step) {
    if let Err(e) = out.write(&Record::Step(step.clone())) {
        tracing::warn!("writing trajectory step: {e}");
    }
}

/// Configuration for [`run_challenge`].
pub struct RunSetup {
    pub model_cfg: ModelConfig,
    pub run_cfg: RunConfig,
    pub sandbox: crate::sandbox::SandboxConfig,
    pub limiter: Option<crate::model::RateLimiter>,
}

/// Loads the challenge, starts its environment, runs an episode and writes
/// the trajectory to `out`. Setup failures still produce a trajectory that
/// ends `exit_agent_error` when the challenge itself could be loaded.
pub fn run_challenge(
    dir: &Path,
    setup: &RunSetup,
    out: Option<&Path>,
) -> anyhow::Result<Trajectory> {
    let challenge = crate::task::load_challenge(dir)?;
    let mut writer = match out {
        Some(p) => TrajectoryWriter::create(p)?,
        None => TrajectoryWriter::discard(),
    };
    let fail = |writer: &mut TrajectoryWriter, msg: String| -> Trajectory {
        let header = make_header(&challenge, &setup.run_cfg, &setup.model_cfg);
        let footer = Footer {
            exit_status: ExitStatus::ExitAgentError,
            ledger: CostLedger::new(setup.run_cfg.budget, setup.model_cfg.price_in, setup.model_cfg.price_out),
            steps: 0,
            submission: None,
            error: Some(msg),
        };
        let _ = writer.write(&Record::Header(header.clone()));
        let _ = writer.write(&Record::Footer(footer.clone()));
        Trajectory {
            header,
            steps: Vec::new(),
            footer: Some(footer),
        }
    };
    let templates = match setup.run_cfg.templates() {
        Ok(t) => t,
        Err(e) => return Ok(fail(&mut writer, format!("loading templates: {e}"))),
    };
    let mut model = match crate::model::build_model(&setup.model_cfg, setup.limiter.clone()) {
        Ok(m) => m,
        Err(e) => return Ok(fail(&mut writer, e.to_string())),
    };
    let mut summarizer_model = match &setup.run_cfg.summarizer.lm_model {
        Some(cfg) if setup.run_cfg.summarizer.mode == crate::summarizer::SummarizerMode::Lm => {
            match crate::model::build_model(cfg, setup.limiter.clone()) {
                Ok(m) => Some(m),
                Err(e) => return Ok(fail(&mut writer, format!("summarizer model: {e}"))),
            }
        }
        _ => None,
    };
    let mut sandbox = setup.sandbox.clone();
    sandbox.output_dir = setup.run_cfg.summarizer.output_dir.clone();
    let mut env = match Environment::start(&challenge, &sandbox) {
        Ok(env) => env,
        Err(e) => return Ok(fail(&mut writer, e.to_string())),
    };
    for w in &env.warnings {
        tracing::warn!("{w}");
    }
    let ep = Episode {
        challenge: &challenge,
        model: model.as_mut(),
        summarizer_model: summarizer_model.as_mut().map(|m| m.as_mut() as &mut dyn ChatModel),
        model_cfg: &setup.model_cfg,
        run_cfg: &setup.run_cfg,
        templates: &templates,
    };
    let traj = run_episode(ep, &mut env, &mut writer);
    env.stop();
    Ok(traj)
}
