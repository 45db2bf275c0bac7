//! Keeps over-long observations out of the context window.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::model::{ChatModel, Message, ModelConfig, Role, Usage};
use crate::sandbox::{EnvError, Environment};
use crate::task::ChallengeInfo;
use crate::templates::{render_summarizer, Templates};

pub const SPILL_NAME_MAX: usize = 64;
/// Lines the file viewer shows at once.
pub const VIEWER_WINDOW: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SummarizerMode {
    None,
    #[default]
    Simple,
    Lm,
}

impl std::str::FromStr for SummarizerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(SummarizerMode::None),
            "simple" => Ok(SummarizerMode::Simple),
            "lm" => Ok(SummarizerMode::Lm),
            _ => Err(format!("unknown summarizer mode {s:?} (none, simple, lm)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SummarizerConfig {
    pub mode: SummarizerMode,
    pub window_length: usize,
    pub output_dir: String,
    /// Model used in lm mode; the agent's own model when unset.
    pub lm_model: Option<ModelConfig>,
}

impl Default for SummarizerConfig {
    fn default() -> Self {
        SummarizerConfig {
            mode: SummarizerMode::Simple,
            window_length: 105,
            output_dir: "/output".into(),
            lm_model: None,
        }
    }
}

/// Where spilled outputs go.
pub trait SpillTarget {
    fn write_file(&mut self, path: &str, bytes: &[u8]) -> std::io::Result<()>;
    fn file_exists(&self, path: &str) -> bool;
    fn open_in_viewer(&mut self, path: &str) -> Result<(), EnvError>;
}

impl SpillTarget for Environment {
    fn write_file(&mut self, path: &str, bytes: &[u8]) -> std::io::Result<()> {
        Environment::write_file(self, path, bytes)
    }

    fn file_exists(&self, path: &str) -> bool {
        Environment::file_exists(self, path)
    }

    fn open_in_viewer(&mut self, path: &str) -> Result<(), EnvError> {
        self.set_open_file(path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Summary {
    pub text: String,
    pub spill_path: Option<String>,
    /// Tokens spent by the summarizer model.
    pub usage: Option<Usage>,
    /// lm mode failed and the simple rendering was used instead.
    pub fell_back: bool,
}

impl Summary {
    fn identity(text: &str) -> Self {
        Summary {
            text: text.to_string(),
            spill_path: None,
            usage: None,
            fell_back: false,
        }
    }
}

/// File name for a spilled output: every non-alphanumeric character of
/// `action + "\n"` becomes an underscore, cut to 64 characters.
pub fn sanitize(action: &str) -> String {
    format!("{action}\n")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .take(SPILL_NAME_MAX)
        .collect()
}

pub fn line_count(text: &str) -> usize {
    text.lines().count()
}

/// Viewer rendering of `content` starting at line 1.
pub fn viewer_window(path: &str, content: &str, window: usize) -> String {
    let lines: Vec<&str> = content.lines().collect();
    let mut out = format!("[File: {path} ({} lines total)]", lines.len());
    for (i, line) in lines.iter().take(window).enumerate() {
        out.push_str(&format!("\n{}:{line}", i + 1));
    }
    if lines.len() > window {
        out.push_str(&format!("\n({} more lines below)", lines.len() - window));
    }
    out
}

pub fn simple_warning(path: &str) -> String {
    format!(
        "Warning: Command output exceeded window, saved command to a file {path} and opened the file at line 1."
    )
}

pub fn lm_text(path: &str, summary: &str) -> String {
    format!(
        "Warning: Command output exceeded window size, saved command to a file {path} and summarized the command output for you.\n\
         If you still want to view the output of the command, use the following command `open {path}`.\n\n\nSUMMARY:\n{summary}"
    )
}

pub struct Summarizer {
    pub cfg: SummarizerConfig,
    templates: Templates,
    spilled: HashSet<String>,
}

impl Summarizer {
    pub fn new(cfg: SummarizerConfig, templates: Templates) -> Self {
        Summarizer {
            cfg,
            templates,
            spilled: HashSet::new(),
        }
    }

    fn spill_path(&mut self, action: &str, target: &dyn SpillTarget) -> String {
        let dir = self.cfg.output_dir.trim_end_matches('/');
        let base = sanitize(action);
        let mut path = format!("{dir}/{base}");
        let mut n = 1;
        while self.spilled.contains(&path) || target.file_exists(&path) {
            path = format!("{dir}/{base}_{n}");
            n += 1;
        }
        self.spilled.insert(path.clone());
        path
    }

    /// Passes short observations through and spills long ones.
    pub fn summarize(
        &mut self,
        observation: &str,
        last_action: &str,
        info: &ChallengeInfo,
        target: &mut dyn SpillTarget,
        lm: Option<&mut dyn ChatModel>,
    ) -> Summary {
        if self.cfg.mode == SummarizerMode::None || line_count(observation) <= self.cfg.window_length {
            return Summary::identity(observation);
        }
        let path = self.spill_path(last_action, target);
        if let Err(e) = target.write_file(&path, observation.as_bytes()) {
            tracing::warn!("could not spill output to {path}: {e}");
            return Summary::identity(observation);
        }
        let mut fell_back = false;
        if self.cfg.mode == SummarizerMode::Lm {
            match lm {
                Some(model) => {
                    let (system, instance) = render_summarizer(
                        &self.templates,
                        info,
                        last_action,
                        observation,
                        self.cfg.window_length,
                    );
                    let msgs = [Message::new(Role::System, system), Message::new(Role::User, instance)];
                    match model.query(&msgs) {
                        Ok(reply) => {
                            let summary: Vec<&str> =
                                reply.text.lines().take(self.cfg.window_length).collect();
                            return Summary {
                                text: lm_text(&path, &summary.join("\n")),
                                spill_path: Some(path),
                                usage: Some(reply.usage),
                                fell_back: false,
                            };
                        }
                        Err(e) => tracing::warn!("summarizer model failed, using simple mode: {e}"),
                    }
                }
                None => tracing::warn!("lm summarizer has no model, using simple mode"),
            }
            fell_back = true;
        }
        let _ = target.open_in_viewer(&path);
        let window = VIEWER_WINDOW.min(self.cfg.window_length);
        Summary {
            text: format!(
                "{}\n\n\n{}",
                simple_warning(&path),
                viewer_window(&path, observation, window)
            ),
            spill_path: Some(path),
            usage: None,
            fell_back,
        }
    }
}
