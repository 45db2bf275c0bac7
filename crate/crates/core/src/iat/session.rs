//! Concrete session transports.

use std::io::Write;
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::escape;
use super::inbox::{Inbox, ReadEnd};
use super::pty::PtyProcess;
use super::{strip_outer_quotes, IatConfig, SessionDirective, Tool};
use crate::sandbox::{Backend, ExecLimits};

/// Result of one input to a session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionReply {
    pub text: String,
    /// The session can no longer be used.
    pub broken: bool,
}

impl SessionReply {
    fn ok(text: String) -> Self {
        SessionReply {
            text,
            broken: false,
        }
    }

    fn broken(text: String) -> Self {
        SessionReply { text, broken: true }
    }
}

pub trait Session: Send {
    fn tool(&self) -> Tool;
    fn send(&mut self, directive: &SessionDirective, limits: &ExecLimits) -> SessionReply;
    fn stop(&mut self);
}

fn clean_text(bytes: &[u8], prompt: Option<&str>) -> String {
    let mut text = String::from_utf8_lossy(bytes).replace("\r\n", "\n");
    if let Some(p) = prompt {
        if let Some(stripped) = text.strip_suffix(p) {
            text.truncate(stripped.len());
        }
    }
    while text.ends_with('\n') {
        text.pop();
    }
    text
}

/// Drops a leading echo of `input` if the terminal produced one.
fn strip_echo(text: String, input: &str) -> String {
    match text.strip_prefix(input) {
        Some(rest) if rest.is_empty() || rest.starts_with('\n') => {
            rest.trim_start_matches('\n').to_string()
        }
        _ => text,
    }
}

pub(crate) fn debugger_argv(gdb: &str, binary: &str, run_args: &str) -> Vec<String> {
    let mut argv: Vec<String> = vec![gdb.into(), "-q".into(), "-nx".into()];
    for setting in [
        "set style enabled off",
        "set pagination off",
        "set confirm off",
        "set width 0",
        "set height 0",
        "set editing off",
    ] {
        argv.push("-iex".into());
        argv.push(setting.into());
    }
    if !run_args.is_empty() {
        argv.push("-ex".into());
        argv.push(format!("set args {run_args}"));
    }
    argv.push("-ex".into());
    argv.push("starti".into());
    argv.push(binary.into());
    argv
}

/// gdb under a terminal, stopped at the program's first instruction.
pub struct DebugSession {
    proc: PtyProcess,
    settle: Duration,
}

const GDB_PROMPT: &str = "(gdb) ";

impl DebugSession {
    /// On failure returns the tool's own output.
    pub fn start(
        backend: &Backend,
        cwd: &str,
        args: &str,
        cfg: &IatConfig,
        limits: &ExecLimits,
    ) -> Result<(DebugSession, String, String), String> {
        let args = args.trim();
        let (binary, run_args) = match args.split_once(char::is_whitespace) {
            Some((b, r)) => (strip_outer_quotes(b), strip_outer_quotes(r)),
            None => (strip_outer_quotes(args), ""),
        };
        let argv = debugger_argv(&cfg.gdb_bin, binary, run_args);
        let cmd = backend.exec_command(&argv, cwd, true);
        let mut proc = PtyProcess::spawn(cmd).map_err(|e| format!("Failed to start gdb: {e}"))?;
        let (out, end) = proc
            .inbox
            .read_response(cfg.settle(), limits.no_output(), Some(GDB_PROMPT.as_bytes()));
        let text = clean_text(&out, Some(GDB_PROMPT));
        if end == ReadEnd::Eof || text.contains("No such file or directory") {
            proc.kill();
            return Err(text);
        }
        Ok((
            DebugSession {
                proc,
                settle: cfg.settle(),
            },
            text,
            binary.to_string(),
        ))
    }
}

impl Session for DebugSession {
    fn tool(&self) -> Tool {
        Tool::Debug
    }

    fn send(&mut self, directive: &SessionDirective, limits: &ExecLimits) -> SessionReply {
        let SessionDirective::Gdb(line) = directive else {
            return SessionReply::ok(super::no_session_text(Tool::Connect));
        };
        if self.proc.write_all(format!("{line}\n").as_bytes()).is_err() {
            return SessionReply::broken(String::new());
        }
        let prompt = Some(GDB_PROMPT.as_bytes());
        let (out, end) = self
            .proc
            .inbox
            .read_response(self.settle, limits.no_output(), prompt);
        let mut text = strip_echo(clean_text(&out, Some(GDB_PROMPT)), line);
        match end {
            ReadEnd::Eof => SessionReply::broken(text),
            ReadEnd::Timeout => {
                // interrupt the inferior and get the prompt back
                let _ = self.proc.write_all(b"\x03");
                let (more, _) =
                    self.proc
                        .inbox
                        .read_response(self.settle, Duration::from_secs(5), prompt);
                let more = clean_text(&more, Some(GDB_PROMPT));
                if !more.is_empty() {
                    if !text.is_empty() {
                        text.push('\n');
                    }
                    text.push_str(&more);
                }
                if !text.is_empty() {
                    text.push('\n');
                }
                text.push_str(&crate::sandbox::no_output_message(limits.no_output_timeout));
                SessionReply::ok(text)
            }
            _ => SessionReply::ok(text),
        }
    }

    fn stop(&mut self) {
        let _ = self.proc.write_all(b"kill\nquit\n");
        std::thread::sleep(Duration::from_millis(50));
        self.proc.kill();
    }
}

fn opening_log(host: &str, port: u16) -> String {
    format!("[x] Opening connection to {host} on port {port}")
}

fn closed_log(host: &str, port: u16) -> String {
    format!("[*] Closed connection to {host} port {port}")
}

fn wrap_banner(banner: &str) -> String {
    format!(
        "{}\n{}\n{}",
        super::SERVER_RESPONSE_BEGIN,
        banner,
        super::SERVER_RESPONSE_END
    )
}

/// Host-side TCP connection, used when the environment shares the host
/// network.
pub struct TcpSession {
    host: String,
    port: u16,
    stream: TcpStream,
    inbox: Inbox,
    settle: Duration,
}

impl TcpSession {
    pub fn start(
        host: &str,
        port: u16,
        cfg: &IatConfig,
        limits: &ExecLimits,
    ) -> Result<(TcpSession, String), String> {
        let opening = opening_log(host, port);
        let failed = format!(
            "{opening}\n[-] {}: Failed\nError: Could not connect to {host} on port {port}",
            &opening[4..]
        );
        let addrs: Vec<_> = (host, port)
            .to_socket_addrs()
            .map_err(|_| failed.clone())?
            .collect();
        let timeout = Duration::from_secs_f64(cfg.connect_timeout_secs);
        let (stream, addr) = addrs
            .iter()
            .find_map(|a| TcpStream::connect_timeout(a, timeout).ok().map(|s| (s, *a)))
            .ok_or_else(|| failed.clone())?;
        let _ = stream.set_nodelay(true);
        let reader = stream.try_clone().map_err(|e| format!("{failed}\n{e}"))?;
        let mut inbox = Inbox::spawn(reader, "connect-reader");
        let (banner, _) = inbox.read_response(cfg.settle(), limits.no_output(), None);
        let banner = clean_text(&banner, None);
        let log = format!(
            "{opening}\n{opening}: Trying {ip}\n[+] Opening connection to {host} on port {port}: Done\n{}",
            wrap_banner(&banner),
            ip = addr.ip()
        );
        Ok((
            TcpSession {
                host: host.to_string(),
                port,
                stream,
                inbox,
                settle: cfg.settle(),
            },
            log,
        ))
    }

    fn write_and_read(&mut self, bytes: &[u8], limits: &ExecLimits) -> SessionReply {
        if self.inbox.is_eof() || self.stream.write_all(bytes).is_err() {
            let (rest, _) = self.inbox.read_response(Duration::ZERO, Duration::ZERO, None);
            let mut text = clean_text(&rest, None);
            if !text.is_empty() {
                text.push('\n');
            }
            text.push_str(&closed_log(&self.host, self.port));
            return SessionReply::broken(text);
        }
        let (out, _) = self
            .inbox
            .read_response(self.settle, limits.no_output(), None);
        SessionReply::ok(clean_text(&out, None))
    }
}

impl Session for TcpSession {
    fn tool(&self) -> Tool {
        Tool::Connect
    }

    fn send(&mut self, directive: &SessionDirective, limits: &ExecLimits) -> SessionReply {
        match directive {
            SessionDirective::SendLine(payload) => {
                let mut bytes = escape::decode(payload);
                bytes.push(b'\n');
                self.write_and_read(&bytes, limits)
            }
            SessionDirective::ConnectExec(command) => {
                let (verb, arg) = command
                    .split_once(' ')
                    .map_or((command.as_str(), ""), |(v, a)| (v, a));
                match verb {
                    "sendline" => {
                        let mut bytes = escape::decode(arg);
                        bytes.push(b'\n');
                        self.write_and_read(&bytes, limits)
                    }
                    "send" => self.write_and_read(&escape::decode(arg), limits),
                    "recv" => {
                        let (out, _) =
                            self.inbox
                                .read_response(self.settle, limits.no_output(), None);
                        SessionReply::ok(clean_text(&out, None))
                    }
                    _ => SessionReply::ok(format!(
                        "*** Unknown syntax: {command}\nAvailable connect commands: send <data>, sendline <data>, recv"
                    )),
                }
            }
            _ => SessionReply::ok(super::no_session_text(Tool::Debug)),
        }
    }

    fn stop(&mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

/// The connect REPL program running inside a container under a terminal.
///
/// Control protocol, one line per directive:
/// `sendline <payload>` with non-printable bytes as `\xHH`, any other
/// `connect_exec` text verbatim, and `stop` to close.
pub struct ConnectReplSession {
    proc: PtyProcess,
    settle: Duration,
}

/// Control line written to the connect REPL for a sendline payload.
pub fn sendline_control_line(payload: &str) -> String {
    format!("sendline {}\n", escape::encode(&escape::decode(payload)))
}

impl ConnectReplSession {
    pub fn start(
        backend: &Backend,
        cwd: &str,
        host: &str,
        port: u16,
        cfg: &IatConfig,
        limits: &ExecLimits,
    ) -> Result<(ConnectReplSession, String), String> {
        let argv = vec![cfg.connect_program.clone(), host.to_string(), port.to_string()];
        Self::spawn(backend.exec_command(&argv, cwd, true), cfg, limits)
    }

    pub fn spawn(
        cmd: std::process::Command,
        cfg: &IatConfig,
        limits: &ExecLimits,
    ) -> Result<(ConnectReplSession, String), String> {
        let mut proc = PtyProcess::spawn(cmd).map_err(|e| format!("Failed to start connect: {e}"))?;
        let (out, end) = proc
            .inbox
            .read_response(cfg.settle(), limits.no_output(), None);
        let text = clean_text(&out, None);
        if end == ReadEnd::Eof {
            return Err(text);
        }
        Ok((
            ConnectReplSession {
                proc,
                settle: cfg.settle(),
            },
            text,
        ))
    }

    fn write_and_read(&mut self, line: &str, limits: &ExecLimits) -> SessionReply {
        if self.proc.write_all(line.as_bytes()).is_err() {
            return SessionReply::broken(String::new());
        }
        let (out, end) = self
            .proc
            .inbox
            .read_response(self.settle, limits.no_output(), None);
        let text = strip_echo(clean_text(&out, None), line.trim_end());
        if end == ReadEnd::Eof || self.proc.has_exited() {
            return SessionReply::broken(text);
        }
        SessionReply::ok(text)
    }
}

impl Session for ConnectReplSession {
    fn tool(&self) -> Tool {
        Tool::Connect
    }

    fn send(&mut self, directive: &SessionDirective, limits: &ExecLimits) -> SessionReply {
        match directive {
            SessionDirective::SendLine(payload) => {
                self.write_and_read(&sendline_control_line(payload), limits)
            }
            SessionDirective::ConnectExec(command) => {
                self.write_and_read(&format!("{command}\n"), limits)
            }
            _ => SessionReply::ok(super::no_session_text(Tool::Debug)),
        }
    }

    fn stop(&mut self) {
        let _ = self.proc.write_all(b"stop\n");
        std::thread::sleep(Duration::from_millis(50));
        self.proc.kill();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cleans_pty_text() {
        assert_eq!(clean_text(b"a\r\nb\r\n(gdb) ", Some(GDB_PROMPT)), "a\nb");
        assert_eq!(strip_echo("continue\nContinuing.".into(), "continue"), "Continuing.");
        assert_eq!(strip_echo("continued".into(), "continue"), "continued");
    }

    #[test]
    fn sendline_control_is_canonical() {
        assert_eq!(sendline_control_line(r"\x00A\xff"), "sendline \\x00A\\xff\n");
        assert_eq!(sendline_control_line("hi there"), "sendline hi there\n");
    }

    #[test]
    fn debugger_argv_places_args_before_starti() {
        let argv = debugger_argv("gdb", "rebuilding", "< input.txt");
        let joined = argv.join("|");
        assert!(joined.ends_with("-ex|set args < input.txt|-ex|starti|rebuilding"));
        assert!(!debugger_argv("gdb", "a", "").iter().any(|a| a.starts_with("set args")));
    }
}
