//! Run configuration files and the batch runner.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::agent::{run_challenge, RunConfig, RunSetup, Trajectory};
use crate::model::{ConfigError, ModelConfig, RateLimiter};
use crate::sandbox::{workdir_name, SandboxConfig};

/// `[run]` and `[sandbox]` tables of a TOML config file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub run: RunConfig,
    pub sandbox: SandboxConfig,
}

fn resolve(base: Option<&Path>, p: &mut Option<PathBuf>) {
    if let (Some(dir), Some(path)) = (base, p.as_mut()) {
        if path.is_relative() {
            *path = dir.join(&*path);
        }
    }
}

impl AgentConfig {
    /// Reads a config file; relative paths resolve against its directory.
    pub fn from_file(path: &Path) -> Result<AgentConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: AgentConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let base = path.parent();
        resolve(base, &mut cfg.run.templates_dir);
        resolve(base, &mut cfg.sandbox.local_root);
        if let Some(m) = cfg.run.summarizer.lm_model.as_mut() {
            resolve(base, &mut m.path);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sandbox
            .limits
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.run.summarizer.window_length == 0 {
            return Err(ConfigError::Invalid("summarizer window_length must be > 0".into()));
        }
        if self.run.format_error_limit == 0 {
            return Err(ConfigError::Invalid("format_error_limit must be > 0".into()));
        }
        if self.run.budget.is_nan() || self.run.budget <= 0.0 {
            return Err(ConfigError::Invalid("budget must be > 0".into()));
        }
        Ok(())
    }

    pub fn setup(&self, model_cfg: ModelConfig) -> RunSetup {
        let limiter = model_cfg
            .rate_limit
            .as_ref()
            .map(|r| RateLimiter::new(r.burst, r.per_second));
        RunSetup {
            model_cfg,
            run_cfg: self.run.clone(),
            sandbox: self.sandbox.clone(),
            limiter,
        }
    }
}

pub struct BatchResult {
    pub challenge_dir: PathBuf,
    pub trajectory_path: PathBuf,
    pub outcome: anyhow::Result<Trajectory>,
}

/// Trajectory file name for a challenge directory.
pub fn trajectory_file_name(challenge_dir: &Path) -> String {
    let stem = challenge_dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "challenge".into());
    format!("{}.jsonl", workdir_name(&stem))
}

/// Runs every challenge with up to `jobs` episodes in parallel. Each run
/// has its own environment, model client and trajectory file; the rate
/// limiter in `setup` is shared. Results keep the input order.
pub fn run_batch(dirs: &[PathBuf], setup: &RunSetup, out_dir: &Path, jobs: usize) -> Vec<BatchResult> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<BatchResult>>> =
        Mutex::new((0..dirs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, dirs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(dir) = dirs.get(i) else { break };
                let trajectory_path = out_dir.join(trajectory_file_name(dir));
                let outcome = run_challenge(dir, setup, Some(&trajectory_path));
                results.lock().expect("batch results poisoned")[i] = Some(BatchResult {
                    challenge_dir: dir.clone(),
                    trajectory_path,
                    outcome,
                });
            });
        }
    });
    results
        .into_inner()
        .expect("batch results poisoned")
        .into_iter()
        .map(|r| r.expect("every index is run"))
        .collect()
}
