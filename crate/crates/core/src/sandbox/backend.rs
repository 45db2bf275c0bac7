//! Where the challenge environment actually lives.
//!
//! `Docker` drives the docker CLI (the endpoint comes from `DOCKER_HOST` or
//! the configured override). `Local` runs everything as host processes in a
//! private directory tree that stands in for the container filesystem; it is
//! what the test suite and offline demos use.

use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use super::{procs, SandboxConfig, StartError};
use crate::task::Challenge;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuntimeKind {
    #[default]
    Local,
    Docker,
}

/// Working directory name for a challenge: anything outside
/// `[A-Za-z0-9_-]` becomes an underscore.
pub fn workdir_name(challenge_name: &str) -> String {
    challenge_name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub enum Backend {
    Local(LocalBackend),
    Docker(DockerBackend),
}

pub struct LocalBackend {
    root: PathBuf,
    _tmp: Option<tempfile::TempDir>,
}

pub struct DockerBackend {
    docker: String,
    endpoint: Option<String>,
    pub container: String,
    stopped: bool,
}

impl Backend {
    /// Creates the environment and copies challenge files into
    /// `/<workdir_name>`. Returns the backend and that container path.
    pub fn start(challenge: &Challenge, cfg: &SandboxConfig) -> Result<(Backend, String), StartError> {
        let workdir = format!("/{}", workdir_name(&challenge.info.name));
        let backend = match cfg.runtime {
            RuntimeKind::Local => Backend::Local(LocalBackend::start(challenge, cfg, &workdir)?),
            RuntimeKind::Docker => {
                Backend::Docker(DockerBackend::start(challenge, cfg, &workdir)?)
            }
        };
        Ok((backend, workdir))
    }

    /// Command that starts the persistent bash reading from stdin.
    pub fn shell_command(&self, workdir: &str, cfg: &SandboxConfig) -> Command {
        match self {
            Backend::Local(l) => {
                let mut cmd = Command::new("bash");
                cmd.args(["--noprofile", "--norc"])
                    .current_dir(l.real_path(workdir))
                    .env("TERM", "dumb")
                    .env("PAGER", "cat")
                    .env("PYTHONUNBUFFERED", "1");
                if let Some(tools) = &cfg.tools_dir {
                    let path = std::env::var("PATH").unwrap_or_default();
                    cmd.env("PATH", format!("{}:{path}", l.real_path(tools).display()));
                }
                cmd
            }
            Backend::Docker(d) => {
                let mut cmd = d.docker_cmd();
                cmd.args(["exec", "-i", "-w", workdir, "-e", "TERM=dumb", "-e", "PAGER=cat"]);
                cmd.args(["-e", "PYTHONUNBUFFERED=1"]);
                cmd.args([d.container.as_str(), "bash", "--noprofile", "--norc"]);
                cmd
            }
        }
    }

    /// Command that runs `argv` inside the environment in `cwd` (a
    /// container path). `tty` requests a terminal from the runtime.
    pub fn exec_command(&self, argv: &[String], cwd: &str, tty: bool) -> Command {
        match self {
            Backend::Local(l) => {
                let mut cmd = Command::new(&argv[0]);
                cmd.args(&argv[1..]).current_dir(l.real_path(cwd));
                cmd
            }
            Backend::Docker(d) => {
                let mut cmd = d.docker_cmd();
                cmd.arg("exec").arg(if tty { "-it" } else { "-i" });
                cmd.args(["-w", cwd, d.container.as_str()]).args(argv);
                cmd
            }
        }
    }

    /// Kills everything running under the main shell.
    pub fn interrupt(&self, shell_host_pid: u32, shell_inner_pid: i32) {
        match self {
            Backend::Local(_) => {
                let _ = nix::sys::signal::kill(
                    nix::unistd::Pid::from_raw(shell_host_pid as i32),
                    nix::sys::signal::Signal::SIGINT,
                );
                procs::kill_descendants(shell_host_pid as i32)
            }
            Backend::Docker(d) => d.kill_children(shell_inner_pid),
        }
    }

    /// Host-visible path for a container path, as the shell sees it.
    pub fn real_path(&self, container_path: &str) -> PathBuf {
        match self {
            Backend::Local(l) => l.real_path(container_path),
            Backend::Docker(_) => PathBuf::from(container_path),
        }
    }

    /// Inverse of [`Backend::real_path`] for paths reported by the shell.
    pub fn display_path(&self, real: &str) -> String {
        match self {
            Backend::Local(l) => l.display_path(real),
            Backend::Docker(_) => real.to_string(),
        }
    }

    pub fn write_file(&self, container_path: &str, bytes: &[u8]) -> std::io::Result<()> {
        match self {
            Backend::Local(l) => {
                let p = l.real_path(container_path);
                if let Some(parent) = p.parent() {
                    std::fs::create_dir_all(parent)?;
                }
                std::fs::write(p, bytes)
            }
            Backend::Docker(d) => d.write_file(container_path, bytes),
        }
    }

    pub fn file_exists(&self, container_path: &str) -> bool {
        match self {
            Backend::Local(l) => l.real_path(container_path).exists(),
            Backend::Docker(d) => d
                .docker_cmd()
                .args(["exec", d.container.as_str(), "test", "-e", container_path])
                .stdout(Stdio::null())
                .stderr(Stdio::null())
                .status()
                .map(|s| s.success())
                .unwrap_or(false),
        }
    }

    /// Whether the connect tool runs in-process against host sockets.
    pub fn native_network(&self) -> bool {
        matches!(self, Backend::Local(_))
    }

    pub fn stop(&mut self) {
        match self {
            Backend::Local(_) => {}
            Backend::Docker(d) => d.stop(),
        }
    }
}

impl LocalBackend {
    fn start(challenge: &Challenge, cfg: &SandboxConfig, workdir: &str) -> Result<Self, StartError> {
        let (root, tmp) = match &cfg.local_root {
            Some(root) => {
                std::fs::create_dir_all(root).map_err(StartError::Io)?;
                (root.clone(), None)
            }
            None => {
                let tmp = tempfile::Builder::new()
                    .prefix("ctf-env-")
                    .tempdir()
                    .map_err(StartError::Io)?;
                (tmp.path().to_path_buf(), Some(tmp))
            }
        };
        let root = root.canonicalize().map_err(StartError::Io)?;
        let backend = LocalBackend { root, _tmp: tmp };
        let dest = backend.real_path(workdir);
        std::fs::create_dir_all(&dest).map_err(StartError::Io)?;
        for file in &challenge.info.files {
            copy_into(&challenge.dir.join(file), &dest.join(file)).map_err(StartError::Io)?;
        }
        Ok(backend)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn real_path(&self, container_path: &str) -> PathBuf {
        self.root.join(container_path.trim_start_matches('/'))
    }

    fn display_path(&self, real: &str) -> String {
        match Path::new(real).strip_prefix(&self.root) {
            Ok(rel) => format!("/{}", rel.display()),
            Err(_) => real.to_string(),
        }
    }
}

fn copy_into(src: &Path, dest: &Path) -> std::io::Result<()> {
    if let Some(parent) = dest.parent() {
        std::fs::create_dir_all(parent)?;
    }
    if src.is_dir() {
        std::fs::create_dir_all(dest)?;
        for entry in std::fs::read_dir(src)? {
            let entry = entry?;
            copy_into(&entry.path(), &dest.join(entry.file_name()))?;
        }
        Ok(())
    } else {
        std::fs::copy(src, dest).map(|_| ())
    }
}

/// Argument vector for `docker run` that starts an idle container.
pub fn docker_run_args(name: &str, image: &str, network: Option<&str>) -> Vec<String> {
    let mut args = vec![
        "run".to_string(),
        "-d".to_string(),
        "--rm".to_string(),
        "--name".to_string(),
        name.to_string(),
    ];
    if let Some(net) = network {
        args.push("--network".to_string());
        args.push(net.to_string());
    }
    args.extend([
        "--entrypoint".to_string(),
        "sleep".to_string(),
        image.to_string(),
        "infinity".to_string(),
    ]);
    args
}

/// Shell snippet that SIGKILLs every descendant of `pid`.
pub fn kill_tree_script(pid: i32) -> String {
    format!(
        "kt() {{ for c in $(pgrep -P \"$1\"); do kt \"$c\"; done; kill -KILL \"$1\" 2>/dev/null; }}; \
         kill -INT {pid}; for c in $(pgrep -P {pid}); do kt \"$c\"; done"
    )
}

impl DockerBackend {
    fn docker_cmd(&self) -> Command {
        let mut cmd = Command::new(&self.docker);
        if let Some(ep) = &self.endpoint {
            cmd.env("DOCKER_HOST", ep);
        }
        cmd
    }

    fn run_quiet(&self, args: &[&str]) -> Result<String, String> {
        let out = self
            .docker_cmd()
            .args(args)
            .stdin(Stdio::null())
            .output()
            .map_err(|e| e.to_string())?;
        if out.status.success() {
            Ok(String::from_utf8_lossy(&out.stdout).trim().to_string())
        } else {
            Err(String::from_utf8_lossy(&out.stderr).trim().to_string())
        }
    }

    fn start(challenge: &Challenge, cfg: &SandboxConfig, workdir: &str) -> Result<Self, StartError> {
        let image = challenge
            .info
            .image
            .clone()
            .unwrap_or_else(|| cfg.image.clone());
        let endpoint = std::env::var(super::RUNTIME_ENDPOINT_ENV).ok();
        let mut backend = DockerBackend {
            docker: cfg.docker_bin.clone(),
            endpoint,
            container: format!("ctf-agent-{}", uuid::Uuid::new_v4().simple()),
            stopped: false,
        };
        if backend.run_quiet(&["image", "inspect", &image]).is_err() {
            backend
                .run_quiet(&["pull", &image])
                .map_err(|msg| StartError::Image { image: image.clone(), msg })?;
        }
        let args = docker_run_args(&backend.container, &image, cfg.network.as_deref());
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        backend
            .run_quiet(&args)
            .map_err(|msg| StartError::Image { image: image.clone(), msg })?;

        let setup = (|| {
            backend.run_quiet(&["exec", &backend.container, "mkdir", "-p", workdir, &cfg.output_dir])?;
            for file in &challenge.info.files {
                let src = challenge.dir.join(file);
                let dest = format!("{}:{}/{}", backend.container, workdir, file);
                if let Some(parent) = Path::new(&format!("{workdir}/{file}")).parent() {
                    backend.run_quiet(&[
                        "exec",
                        &backend.container,
                        "mkdir",
                        "-p",
                        &parent.to_string_lossy(),
                    ])?;
                }
                backend.run_quiet(&["cp", &src.to_string_lossy(), &dest])?;
            }
            Ok::<_, String>(())
        })();
        if let Err(msg) = setup {
            backend.stop();
            return Err(StartError::Setup(msg));
        }
        Ok(backend)
    }

    fn kill_children(&self, pid: i32) {
        let _ = self.run_quiet(&["exec", &self.container, "bash", "-c", &kill_tree_script(pid)]);
    }

    fn write_file(&self, path: &str, bytes: &[u8]) -> std::io::Result<()> {
        use std::io::Write;
        let mut child = self
            .docker_cmd()
            .args(["exec", "-i", &self.container, "sh", "-c"])
            .arg("mkdir -p \"$(dirname \"$1\")\" && cat > \"$1\"")
            .args(["sh", path])
            .stdin(Stdio::piped())
            .stdout(Stdio::null())
            .spawn()?;
        child.stdin.take().expect("piped").write_all(bytes)?;
        let status = child.wait()?;
        if status.success() {
            Ok(())
        } else {
            Err(std::io::Error::other(format!("writing {path} failed")))
        }
    }

    /// Whether `host:port` accepts TCP connections from inside the container.
    pub fn probe_server(&self, host: &str, port: u16) -> bool {
        let script = format!("exec 3<>/dev/tcp/{host}/{port}");
        self.run_quiet(&["exec", &self.container, "timeout", "5", "bash", "-c", &script])
            .is_ok()
    }

    fn stop(&mut self) {
        if !self.stopped {
            self.stopped = true;
            let _ = self.run_quiet(&["rm", "-f", &self.container]);
        }
    }
}

impl Drop for DockerBackend {
    fn drop(&mut self) {
        self.stop();
    }
}
