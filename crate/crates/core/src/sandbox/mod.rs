//! The challenge environment: container lifecycle, the persistent main
//! shell, and the interactive session that lives next to it.

mod backend;
pub(crate) mod procs;
mod shell;

use std::path::PathBuf;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

pub use backend::{docker_run_args, kill_tree_script, workdir_name, Backend, RuntimeKind};
pub use shell::{MarkerInfo, PersistentShell, RawExec, ShellError};

use crate::iat::{IatConfig, SessionDirective, SessionManager};
use crate::task::Challenge;

/// Overrides the docker endpoint (`DOCKER_HOST`) for the environment.
pub const RUNTIME_ENDPOINT_ENV: &str = "CTF_AGENT_DOCKER_HOST";

pub const EMPTY_OUTPUT: &str = "Your command ran successfully and did not produce any output.";

pub fn no_output_message(seconds: f64) -> String {
    format!(
        "EXECUTION TIMED OUT BECAUSE NO OUTPUT WAS PRODUCED FOR MORE THAN {seconds:.1} SECONDS.\n\
         PLEASE REFINE YOUR RUNNING COMMAND SO IT WILL PRODUCE OUTPUT IN THE SPECIFIED TIME FRAME."
    )
}

pub fn overall_timeout_message(seconds: f64) -> String {
    format!("EXECUTION TIMED OUT BECAUSE THE COMMAND RAN FOR MORE THAN {seconds:.1} SECONDS.")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecLimits {
    pub overall_timeout: f64,
    pub no_output_timeout: f64,
}

impl Default for ExecLimits {
    fn default() -> Self {
        ExecLimits {
            overall_timeout: 600.0,
            no_output_timeout: 300.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid limits: need 0 < no_output_timeout ({no_output}) <= overall_timeout ({overall})")]
pub struct InvalidLimits {
    pub overall: f64,
    pub no_output: f64,
}

impl ExecLimits {
    pub fn new(overall_timeout: f64, no_output_timeout: f64) -> Result<Self, InvalidLimits> {
        let l = ExecLimits {
            overall_timeout,
            no_output_timeout,
        };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<(), InvalidLimits> {
        if self.no_output_timeout > 0.0
            && self.no_output_timeout <= self.overall_timeout
            && self.overall_timeout.is_finite()
        {
            Ok(())
        } else {
            Err(InvalidLimits {
                overall: self.overall_timeout,
                no_output: self.no_output_timeout,
            })
        }
    }

    pub fn overall(&self) -> Duration {
        Duration::from_secs_f64(self.overall_timeout)
    }

    pub fn no_output(&self) -> Duration {
        Duration::from_secs_f64(self.no_output_timeout)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxConfig {
    pub runtime: RuntimeKind,
    /// Default image when the challenge names none.
    pub image: String,
    pub docker_bin: String,
    pub network: Option<String>,
    /// Directory holding the container-side tool programs, put first on PATH.
    pub tools_dir: Option<String>,
    /// Host directory used as the filesystem root by the local runtime.
    /// A temporary directory when unset.
    pub local_root: Option<PathBuf>,
    pub output_dir: String,
    pub limits: ExecLimits,
    pub iat: IatConfig,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        SandboxConfig {
            runtime: RuntimeKind::Local,
            image: "ctf-agent-env:latest".into(),
            docker_bin: "docker".into(),
            network: None,
            tools_dir: None,
            local_root: None,
            output_dir: "/output".into(),
            limits: ExecLimits::default(),
            iat: IatConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StartError {
    #[error("environment setup failed: {0}")]
    Io(#[source] std::io::Error),
    #[error("image {image} unavailable: {msg}")]
    Image { image: String, msg: String },
    #[error("container setup failed: {0}")]
    Setup(String),
    #[error(transparent)]
    Shell(#[from] ShellError),
    #[error(transparent)]
    Limits(#[from] InvalidLimits),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvError {
    #[error("the main shell died")]
    ShellDied,
    #[error("the environment was stopped")]
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShellState {
    pub cwd: String,
    pub open_file: String,
    pub interactive_session: String,
}

impl ShellState {
    /// The state lines appended to every observation.
    pub fn render_suffix(&self) -> String {
        format!(
            "(Open file: {})\n(Current directory: {})\n(Interactive session: {})\nbash-$",
            self.open_file, self.cwd, self.interactive_session
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "lowercase")]
pub enum Sentinel {
    Submit(String),
    Forfeit,
}

/// Line format: `<prefix> submit <base64 of the argument>` or
/// `<prefix> forfeit`.
pub fn parse_sentinel(line: &str, prefix: &str) -> Option<Sentinel> {
    let rest = line.trim_end_matches('\r').strip_prefix(prefix)?.strip_prefix(' ')?;
    let (kind, payload) = rest.split_once(' ').unwrap_or((rest, ""));
    match kind {
        "forfeit" => Some(Sentinel::Forfeit),
        "submit" => {
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(payload.trim())
                .ok()?;
            Some(Sentinel::Submit(String::from_utf8_lossy(&bytes).into_owned()))
        }
        _ => None,
    }
}

/// Shell functions that announce a submission or a forfeit to the host.
pub fn sentinel_functions(prefix: &str) -> String {
    format!(
        "export CTF_SENTINEL_PREFIX='{prefix}'\n\
         submit() {{ if [ $# -lt 1 ]; then echo \"Usage: submit '<flag>'\"; return 2; fi; \
         printf '%s submit %s\\n' \"$CTF_SENTINEL_PREFIX\" \"$(printf %s \"$1\" | base64 | tr -d '\\n')\"; }}\n\
         exit_forfeit() {{ printf '%s forfeit\\n' \"$CTF_SENTINEL_PREFIX\"; }}\n"
    )
}

/// Splits sentinel lines out of command output.
pub fn extract_sentinels(output: &str, prefix: &str) -> (String, Vec<Sentinel>) {
    let mut kept = Vec::new();
    let mut found = Vec::new();
    for line in output.split('\n') {
        if line.starts_with(prefix) {
            if let Some(s) = parse_sentinel(line, prefix) {
                found.push(s);
            }
        } else {
            kept.push(line);
        }
    }
    (kept.join("\n"), found)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecResult {
    pub output: String,
    pub timed_out: bool,
    pub no_output_timeout_fired: bool,
    pub duration: Duration,
    pub exit_code: i32,
    pub sentinels: Vec<Sentinel>,
}

/// A live challenge environment.
pub struct Environment {
    backend: Backend,
    shell: Option<PersistentShell>,
    workdir: String,
    sentinel_prefix: String,
    cwd: String,
    open_file: String,
    pub limits: ExecLimits,
    pub iat: SessionManager,
    pub output_dir: String,
    /// Non-fatal problems noticed during start.
    pub warnings: Vec<String>,
    stopped: bool,
}

impl Environment {
    pub fn start(challenge: &Challenge, cfg: &SandboxConfig) -> Result<Environment, StartError> {
        cfg.limits.validate()?;
        let (backend, workdir) = Backend::start(challenge, cfg)?;
        let sentinel_prefix = format!("@@CTF_SENTINEL_{}@@", uuid::Uuid::new_v4().simple());
        let init = format!(
            "export CURRENT_FILE=n/a CURRENT_LINE=0\n{}",
            sentinel_functions(&sentinel_prefix)
        );
        let shell = PersistentShell::spawn(backend.shell_command(&workdir, cfg), &init)?;
        let _ = backend.write_file(&format!("{}/.keep", cfg.output_dir), b"");
        let mut env = Environment {
            backend,
            shell: Some(shell),
            cwd: workdir.clone(),
            workdir,
            sentinel_prefix,
            open_file: "n/a".into(),
            limits: cfg.limits,
            iat: SessionManager::new(cfg.iat.clone()),
            output_dir: cfg.output_dir.clone(),
            warnings: Vec::new(),
            stopped: false,
        };
        if let Some(server) = &challenge.info.server {
            if !env.server_reachable(&server.host, server.port) {
                let w = format!("challenge server {}:{} is not reachable", server.host, server.port);
                tracing::warn!("{w}");
                env.warnings.push(w);
            }
        }
        Ok(env)
    }

    fn server_reachable(&self, host: &str, port: u16) -> bool {
        match &self.backend {
            Backend::Docker(d) => d.probe_server(host, port),
            Backend::Local(_) => {
                use std::net::ToSocketAddrs;
                (host, port).to_socket_addrs().is_ok_and(|mut addrs| {
                    addrs.any(|a| {
                        std::net::TcpStream::connect_timeout(&a, Duration::from_secs(3)).is_ok()
                    })
                })
            }
        }
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn workdir(&self) -> &str {
        &self.workdir
    }

    pub fn sentinel_prefix(&self) -> &str {
        &self.sentinel_prefix
    }

    pub fn is_alive(&self) -> bool {
        !self.stopped && self.shell.as_ref().is_some_and(|s| !s.is_dead())
    }

    /// Runs `command` in the main shell with the environment's limits.
    pub fn exec(&mut self, command: &str) -> Result<ExecResult, EnvError> {
        let limits = self.limits;
        self.exec_with(command, &limits)
    }

    pub fn exec_with(&mut self, command: &str, limits: &ExecLimits) -> Result<ExecResult, EnvError> {
        if self.stopped {
            return Err(EnvError::Stopped);
        }
        let shell = self.shell.as_mut().ok_or(EnvError::ShellDied)?;
        let host_pid = shell.host_pid();
        let backend = &self.backend;
        let raw = shell
            .run(command, limits, &|inner| backend.interrupt(host_pid, inner))
            .map_err(|_| EnvError::ShellDied)?;
        self.cwd = self.backend.display_path(&raw.marker.cwd);
        self.open_file = match raw.marker.open_file.as_str() {
            "n/a" | "" => "n/a".to_string(),
            f => self.backend.display_path(f),
        };
        let text = String::from_utf8_lossy(&raw.output);
        let (output, sentinels) = extract_sentinels(&text, &self.sentinel_prefix);
        let mut output = output.trim_end_matches('\n').to_string();
        let timed_out = raw.no_output_timeout_fired || raw.overall_timeout_fired;
        if timed_out {
            if !output.is_empty() && !output.ends_with('\n') {
                output.push('\n');
            }
            if raw.no_output_timeout_fired {
                output.push_str(&no_output_message(limits.no_output_timeout));
            } else {
                output.push_str(&overall_timeout_message(limits.overall_timeout));
            }
        } else if output.trim().is_empty() && sentinels.is_empty() {
            output = EMPTY_OUTPUT.to_string();
        }
        Ok(ExecResult {
            output,
            timed_out,
            no_output_timeout_fired: raw.no_output_timeout_fired,
            duration: raw.duration,
            exit_code: raw.marker.exit_code,
            sentinels,
        })
    }

    pub fn state(&self) -> ShellState {
        ShellState {
            cwd: self.cwd.clone(),
            open_file: self.open_file.clone(),
            interactive_session: self.iat.descriptor(),
        }
    }

    /// Points the file viewer at `path` (a container path), line 1.
    pub fn set_open_file(&mut self, path: &str) -> Result<(), EnvError> {
        let real = self.backend.real_path(path);
        let cmd = format!(
            "export CURRENT_FILE={}; export CURRENT_LINE=1",
            shell_quote(&real.to_string_lossy())
        );
        self.exec(&cmd).map(|_| ())
    }

    pub fn write_file(&self, path: &str, bytes: &[u8]) -> std::io::Result<()> {
        self.backend.write_file(path, bytes)
    }

    pub fn file_exists(&self, path: &str) -> bool {
        self.backend.file_exists(path)
    }

    /// Host-visible path of a container path.
    pub fn real_path(&self, path: &str) -> PathBuf {
        self.backend.real_path(path)
    }

    /// Runs an interactive-tool directive in the current directory.
    pub fn iat_dispatch(&mut self, directive: &SessionDirective) -> String {
        let limits = self.limits;
        self.iat.dispatch(&self.backend, &self.cwd, directive, &limits)
    }

    /// Kills the main shell, as if it had crashed.
    pub fn kill_shell(&mut self) {
        if let Some(shell) = self.shell.as_mut() {
            shell.kill();
        }
    }

    /// Reaps the session, the shell and the container. Idempotent.
    pub fn stop(&mut self) {
        if self.stopped {
            return;
        }
        self.stopped = true;
        self.iat.stop_all();
        if let Some(mut shell) = self.shell.take() {
            let host_pid = shell.host_pid();
            procs::kill_descendants(host_pid as i32);
            shell.kill();
        }
        self.backend.stop();
    }
}

impl Drop for Environment {
    fn drop(&mut self) {
        self.stop();
    }
}

pub fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}
