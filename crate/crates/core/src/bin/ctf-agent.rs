use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use ctf_agent::agent::{run_challenge, ExitStatus, Trajectory};
use ctf_agent::analyzer::{detect_leakage, summary_report, transition_stats};
use ctf_agent::commands::ActionCategory;
use ctf_agent::config::{run_batch, AgentConfig};
use ctf_agent::model::ModelConfig;
use ctf_agent::sandbox::RuntimeKind;
use ctf_agent::summarizer::SummarizerMode;

#[derive(Parser)]
#[command(name = "ctf-agent", version, about = "Run an LM agent against CTF challenges")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one challenge. Exits 0 iff the flag was submitted.
    Run {
        #[arg(long)]
        challenge: PathBuf,
        #[command(flatten)]
        common: RunArgs,
        /// Trajectory file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every challenge directory matching a glob.
    Batch {
        #[arg(long)]
        challenges: String,
        #[command(flatten)]
        common: RunArgs,
        /// Directory for the trajectory files.
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Report statistics over trajectory files.
    Analyze {
        #[arg(long)]
        trajs: String,
        /// Include solution-leakage verdicts.
        #[arg(long)]
        leakage: bool,
        /// Challenge names exempt from leakage checks.
        #[arg(long = "exempt", value_name = "NAME")]
        exempt: Vec<String>,
        /// Transition statistics for one action category, or `all`.
        #[arg(long, value_name = "CATEGORY")]
        transitions: Option<String>,
        /// Write the machine-readable report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Model config (TOML).
    #[arg(long)]
    model: PathBuf,
    /// Run/sandbox config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// none, simple or lm.
    #[arg(long)]
    summarizer: Option<SummarizerMode>,
    #[arg(long)]
    no_iat: bool,
    #[arg(long)]
    truncate_soliloquies: bool,
    #[arg(long)]
    max_turns: Option<usize>,
    /// Dollar budget per run.
    #[arg(long)]
    budget: Option<f64>,
    /// local or docker.
    #[arg(long)]
    runtime: Option<String>,
}

impl RunArgs {
    fn setup(&self) -> anyhow::Result<ctf_agent::agent::RunSetup> {
        let mut cfg = match &self.config {
            Some(p) => AgentConfig::from_file(p)?,
            None => AgentConfig::default(),
        };
        if let Some(m) = self.summarizer {
            cfg.run.summarizer.mode = m;
        }
        if self.no_iat {
            cfg.run.include_iat = false;
        }
        if self.truncate_soliloquies {
            cfg.run.truncate_soliloquies = true;
        }
        if let Some(n) = self.max_turns {
            cfg.run.max_turns = n;
        }
        if let Some(b) = self.budget {
            cfg.run.budget = b;
        }
        if let Some(r) = &self.runtime {
            cfg.sandbox.runtime = match r.as_str() {
                "local" => RuntimeKind::Local,
                "docker" => RuntimeKind::Docker,
                other => bail!("unknown runtime {other:?} (local, docker)"),
            };
        }
        cfg.validate()?;
        let model = ModelConfig::from_file(&self.model)?;
        Ok(cfg.setup(model))
    }
}

fn expand(pattern: &str) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in glob::glob(pattern).with_context(|| format!("bad glob {pattern:?}"))? {
        out.push(entry?);
    }
    out.sort();
    Ok(out)
}

fn print_outcome(dir: &Path, t: &Trajectory) {
    let f = t.footer.as_ref();
    println!(
        "{}: {} in {} turns, ${:.4}{}",
        dir.display(),
        t.exit_status().map_or("unfinished", |s| s.as_str()),
        t.steps.len(),
        t.dollars(),
        f.and_then(|f| f.error.as_ref())
            .map(|e| format!(" ({e})"))
            .unwrap_or_default()
    );
}

fn run() -> anyhow::Result<bool> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            challenge,
            common,
            out,
        } => {
            let setup = common.setup()?;
            let t = run_challenge(&challenge, &setup, Some(&out))?;
            print_outcome(&challenge, &t);
            Ok(t.exit_status() == Some(ExitStatus::Submitted))
        }
        Command::Batch {
            challenges,
            common,
            out_dir,
            jobs,
        } => {
            let dirs = expand(&challenges)?;
            if dirs.is_empty() {
                bail!("no challenge directories match {challenges:?}");
            }
            let setup = common.setup()?;
            std::fs::create_dir_all(&out_dir)?;
            let results = run_batch(&dirs, &setup, &out_dir, jobs);
            let mut all = true;
            for r in &results {
                match &r.outcome {
                    Ok(t) => {
                        print_outcome(&r.challenge_dir, t);
                        all &= t.solved();
                    }
                    Err(e) => {
                        println!("{}: error: {e:#}", r.challenge_dir.display());
                        all = false;
                    }
                }
            }
            let solved = results
                .iter()
                .filter(|r| r.outcome.as_ref().is_ok_and(|t| t.solved()))
                .count();
            println!("solved {solved}/{}", results.len());
            Ok(all)
        }
        Command::Analyze {
            trajs,
            leakage,
            exempt,
            transitions,
            report,
        } => {
            let paths = expand(&trajs)?;
            if paths.is_empty() {
                bail!("no trajectory files match {trajs:?}");
            }
            let mut loaded = Vec::new();
            for p in &paths {
                loaded.push(Trajectory::read(p).with_context(|| format!("reading {}", p.display()))?);
            }
            let mut r = summary_report(&loaded);
            if leakage {
                r.leakage = paths
                    .iter()
                    .zip(&loaded)
                    .map(|(p, t)| (p.display().to_string(), detect_leakage(t, &exempt)))
                    .collect();
            }
            if let Some(c) = transitions {
                let filter = match c.as_str() {
                    "all" => None,
                    other => Some(
                        ActionCategory::parse(other)
                            .with_context(|| format!("unknown action category {other:?}"))?,
                    ),
                };
                r.transitions = Some(transition_stats(&loaded, filter));
            }
            print!("{}", r.to_text());
            if let Some(p) = report {
                std::fs::write(&p, serde_json::to_string_pretty(&r)?)
                    .with_context(|| format!("writing {}", p.display()))?;
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
