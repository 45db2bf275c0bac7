//! The persistent main shell.
//!
//! Commands are shipped base64-encoded on a single protocol line and
//! `eval`ed in the long-lived bash process, so `cd` and `export` persist.
//! Every command is followed by a marker line carrying the exit code, the
//! working directory and the viewer's open file; the marker embeds a random
//! id so command output cannot forge it.

use std::io::{Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use base64::Engine as _;

use super::ExecLimits;

/// SIGINT makes the shell leave whatever loop it is in.
pub(crate) const INTERRUPT_TRAP: &str = "trap 'break 1000 2>/dev/null; return 130 2>/dev/null' INT";

const KILL_GRACE: Duration = Duration::from_secs(10);
const REINTERRUPT: Duration = Duration::from_millis(500);
const STARTUP_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, thiserror::Error)]
pub enum ShellError {
    #[error("failed to spawn shell: {0}")]
    Spawn(#[source] std::io::Error),
    #[error("shell died")]
    Died,
    #[error("shell did not come up within {0:?}")]
    StartupTimeout(Duration),
}

enum ReadEvent {
    Data(Vec<u8>),
    Eof,
}

/// What the marker line reported after a command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkerInfo {
    pub exit_code: i32,
    pub cwd: String,
    pub open_file: String,
}

#[derive(Debug, Clone)]
pub struct RawExec {
    /// Bytes produced before completion or before the timeout fired.
    pub output: Vec<u8>,
    pub marker: MarkerInfo,
    pub no_output_timeout_fired: bool,
    pub overall_timeout_fired: bool,
    pub duration: Duration,
}

pub struct PersistentShell {
    child: Child,
    stdin: ChildStdin,
    rx: Receiver<ReadEvent>,
    marker: String,
    buf: Vec<u8>,
    /// Shell pid as seen from inside its own pid namespace.
    pub inner_pid: i32,
    dead: bool,
}

impl PersistentShell {
    /// Spawns `cmd` (a bash invocation reading its script from stdin) and
    /// runs `init` before returning.
    pub fn spawn(mut cmd: Command, init: &str) -> Result<Self, ShellError> {
        cmd.stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null());
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            cmd.process_group(0);
        }
        let mut child = cmd.spawn().map_err(ShellError::Spawn)?;
        let stdin = child.stdin.take().expect("piped stdin");
        let mut stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::Builder::new()
            .name("shell-reader".into())
            .spawn(move || {
                let mut chunk = [0u8; 8192];
                loop {
                    match stdout.read(&mut chunk) {
                        Ok(0) | Err(_) => {
                            let _ = tx.send(ReadEvent::Eof);
                            return;
                        }
                        Ok(n) => {
                            if tx.send(ReadEvent::Data(chunk[..n].to_vec())).is_err() {
                                return;
                            }
                        }
                    }
                }
            })
            .map_err(ShellError::Spawn)?;

        let marker = format!("__CTF_DONE_{}__", uuid::Uuid::new_v4().simple());
        let mut shell = PersistentShell {
            child,
            stdin,
            rx,
            marker,
            buf: Vec::new(),
            inner_pid: 0,
            dead: false,
        };
        let script = format!(
            "exec 2>&1\n{INTERRUPT_TRAP}\n{init}\nprintf '\\n%s\\t%s\\t%s\\t%s\\n' '{m}' \"$$\" \"$PWD\" \"${{CURRENT_FILE:-n/a}}\"\n",
            m = shell.marker
        );
        shell.write(script.as_bytes())?;
        let deadline = Instant::now() + STARTUP_TIMEOUT;
        loop {
            if let Some((_, info)) = shell.take_until_marker() {
                shell.inner_pid = info.exit_code;
                break;
            }
            match shell.recv_until(deadline) {
                Ok(true) => {}
                Ok(false) => return Err(ShellError::StartupTimeout(STARTUP_TIMEOUT)),
                Err(e) => return Err(e),
            }
        }
        Ok(shell)
    }

    pub fn is_dead(&self) -> bool {
        self.dead
    }

    /// Host pid of the spawned process.
    pub fn host_pid(&self) -> u32 {
        self.child.id()
    }

    fn write(&mut self, bytes: &[u8]) -> Result<(), ShellError> {
        if self.dead {
            return Err(ShellError::Died);
        }
        let res = self.stdin.write_all(bytes).and_then(|_| self.stdin.flush());
        if res.is_err() {
            self.dead = true;
            return Err(ShellError::Died);
        }
        Ok(())
    }

    /// Waits for at most until `deadline` for more bytes. Ok(false) on timeout.
    fn recv_until(&mut self, deadline: Instant) -> Result<bool, ShellError> {
        let wait = deadline.saturating_duration_since(Instant::now());
        match self.rx.recv_timeout(wait) {
            Ok(ReadEvent::Data(d)) => {
                self.buf.extend_from_slice(&d);
                Ok(true)
            }
            Ok(ReadEvent::Eof) | Err(RecvTimeoutError::Disconnected) => {
                self.dead = true;
                Err(ShellError::Died)
            }
            Err(RecvTimeoutError::Timeout) => Ok(false),
        }
    }

    /// If the buffer holds a complete marker line, splits it off and
    /// returns (output before marker, marker info).
    fn take_until_marker(&mut self) -> Option<(Vec<u8>, MarkerInfo)> {
        let needle = self.marker.as_bytes();
        let pos = find(&self.buf, needle)?;
        let line_end = self.buf[pos..].iter().position(|&b| b == b'\n')? + pos;
        let line = String::from_utf8_lossy(&self.buf[pos + needle.len()..line_end]).into_owned();
        let mut fields = line.trim_start_matches('\t').splitn(3, '\t');
        let exit_code = fields.next().and_then(|s| s.trim().parse().ok()).unwrap_or(-1);
        let cwd = fields.next().unwrap_or("").to_string();
        let open_file = fields.next().unwrap_or("n/a").to_string();
        let mut out: Vec<u8> = self.buf[..pos].to_vec();
        // the marker printf starts with its own newline
        if out.last() == Some(&b'\n') {
            out.pop();
        }
        self.buf.drain(..=line_end);
        Some((
            out,
            MarkerInfo {
                exit_code,
                cwd,
                open_file,
            },
        ))
    }

    /// Runs one command. `interrupt` is called once if a timeout fires and
    /// must kill whatever the shell is currently running.
    pub fn run(
        &mut self,
        command: &str,
        limits: &ExecLimits,
        interrupt: &dyn Fn(i32),
    ) -> Result<RawExec, ShellError> {
        let encoded = base64::engine::general_purpose::STANDARD.encode(command.as_bytes());
        let line = format!(
            "__ctf_cmd=$(printf %s '{encoded}' | base64 -d); eval \"$__ctf_cmd\" < /dev/null; \
             __ctf_rc=$?; printf '\\n%s\\t%s\\t%s\\t%s\\n' '{m}' \"$__ctf_rc\" \"$PWD\" \"${{CURRENT_FILE:-n/a}}\"\n",
            m = self.marker
        );
        let started = Instant::now();
        self.write(line.as_bytes())?;

        let overall_deadline = started + limits.overall();
        let mut last_byte = started;
        loop {
            if let Some((output, marker)) = self.take_until_marker() {
                return Ok(RawExec {
                    output,
                    marker,
                    no_output_timeout_fired: false,
                    overall_timeout_fired: false,
                    duration: started.elapsed(),
                });
            }
            let silence_deadline = last_byte + limits.no_output();
            let deadline = silence_deadline.min(overall_deadline);
            let before = self.buf.len();
            if self.recv_until(deadline)? {
                if self.buf.len() > before {
                    last_byte = Instant::now();
                }
                continue;
            }
            let no_output = Instant::now() >= silence_deadline;
            let overall = !no_output;
            let partial = std::mem::take(&mut self.buf);
            let partial = match find(&partial, self.marker.as_bytes()) {
                // marker began arriving in the same instant; keep only what precedes it
                Some(p) => partial[..p].to_vec(),
                None => partial,
            };
            interrupt(self.inner_pid);
            let marker = self.drain_to_marker(interrupt)?;
            return Ok(RawExec {
                output: partial,
                marker,
                no_output_timeout_fired: no_output,
                overall_timeout_fired: overall,
                duration: started.elapsed(),
            });
        }
    }

    /// After an interrupt: discard everything up to the marker, repeating
    /// the interrupt while the command keeps going.
    fn drain_to_marker(&mut self, interrupt: &dyn Fn(i32)) -> Result<MarkerInfo, ShellError> {
        let deadline = Instant::now() + KILL_GRACE;
        let mut next_interrupt = Instant::now() + REINTERRUPT;
        loop {
            if let Some((_, marker)) = self.take_until_marker() {
                return Ok(marker);
            }
            let now = Instant::now();
            if now >= deadline {
                self.kill();
                return Err(ShellError::Died);
            }
            if now >= next_interrupt {
                interrupt(self.inner_pid);
                next_interrupt = now + REINTERRUPT;
            }
            self.recv_until(next_interrupt.min(deadline))?;
        }
    }

    pub fn kill(&mut self) {
        self.dead = true;
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for PersistentShell {
    fn drop(&mut self) {
        if let Ok(None) = self.child.try_wait() {
            let _ = self.child.kill();
        }
        let _ = self.child.wait();
    }
}

pub(crate) fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    if needle.is_empty() || haystack.len() < needle.len() {
        return None;
    }
    haystack.windows(needle.len()).position(|w| w == needle)
}
