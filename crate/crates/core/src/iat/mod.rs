//! Interactive agent tools: one background REPL session (a debugger or a
//! server connection) that lives alongside the main shell.
//!
//! At most one session is alive per environment. Starting a second one is
//! refused without touching the first.

mod escape;
mod inbox;
mod pty;
mod session;

use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use escape::{decode as decode_escapes, encode as encode_escapes};
pub use inbox::{Inbox, ReadEnd};
pub use pty::PtyProcess;
pub use session::{ConnectReplSession, DebugSession, Session, SessionReply, TcpSession};

use crate::sandbox::{Backend, ExecLimits};

pub const SERVER_RESPONSE_BEGIN: &str = "-------SERVER RESPONSE-------";
pub const SERVER_RESPONSE_END: &str = "-------END OF RESPONSE-------";
pub const SESSION_FAILED: &str = "COMMAND FAILED TO EXECUTE. TERMINATING INTERACTIVE SESSION.";

/// Quiet period that ends a read when no prompt pattern applies.
pub const DEFAULT_SETTLE: Duration = Duration::from_millis(500);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tool {
    Debug,
    Connect,
}

/// Static description of an interactive tool.
#[derive(Debug, Clone, Copy)]
pub struct SessionSpec {
    pub tool: Tool,
    /// Name used in session messages and descriptors.
    pub session_name: &'static str,
    /// Program launched in the environment; `{target}` is substituted.
    pub launch_command: &'static str,
    /// Renders into the `(Interactive session: ...)` line.
    pub descriptor_template: &'static str,
    pub stop_command: &'static str,
    /// Output suffix meaning the tool is waiting for input.
    pub prompt: Option<&'static str>,
}

pub const SPECS: [SessionSpec; 2] = [
    SessionSpec {
        tool: Tool::Debug,
        session_name: "gdb",
        launch_command: "gdb {target}",
        descriptor_template: "gdb {target}",
        stop_command: "debug_stop",
        prompt: Some("(gdb) "),
    },
    SessionSpec {
        tool: Tool::Connect,
        session_name: "connect",
        launch_command: "connect_repl {target}",
        descriptor_template: "connect {target}",
        stop_command: "connect_stop",
        prompt: None,
    },
];

impl Tool {
    pub fn spec(self) -> &'static SessionSpec {
        SPECS.iter().find(|s| s.tool == self).expect("every tool has a spec")
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tool::Debug => "debug",
            Tool::Connect => "connect",
        }
    }
}

impl SessionSpec {
    pub fn descriptor(&self, target: &str) -> String {
        self.descriptor_template.replace("{target}", target)
    }
}

/// Public view of the live session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionHandle {
    pub tool: Tool,
    /// Binary path for the debugger, `host port` for connections.
    pub target: String,
    pub alive: bool,
}

impl SessionHandle {
    pub fn descriptor(&self) -> String {
        self.tool.spec().descriptor(&self.target)
    }
}

/// What an agent-level verb asks of the session layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionDirective {
    Start { tool: Tool, args: String },
    /// A line for the debugger.
    Gdb(String),
    /// A payload for `sendline`, still in `\xHH` text form.
    SendLine(String),
    /// A control command for the connection REPL.
    ConnectExec(String),
    Stop(Tool),
    /// The verb was recognized but its arguments were not usable.
    Usage(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("not an interactive-tool command")]
pub struct NotAnIatCommand;

/// Removes one matched pair of surrounding single or double quotes.
pub fn strip_outer_quotes(s: &str) -> &str {
    let t = s.trim();
    for q in ['\'', '"'] {
        if t.len() >= 2 && t.starts_with(q) && t.ends_with(q) {
            return &t[1..t.len() - 1];
        }
    }
    t
}

fn usage(verb: &str) -> SessionDirective {
    let doc = crate::commands::lookup(verb).expect("registered verb");
    SessionDirective::Usage(format!(
        "Usage: {}\n{}",
        doc.signature, doc.docstring
    ))
}

/// Maps one agent command onto a session directive.
pub fn translate_command(action: &str) -> Result<SessionDirective, NotAnIatCommand> {
    let action = action.trim();
    let (verb, rest) = match action.split_once(char::is_whitespace) {
        Some((v, r)) => (v, r.trim()),
        None => (action, ""),
    };
    let d = match verb {
        "debug_start" => {
            if rest.is_empty() {
                return Ok(usage(verb));
            }
            SessionDirective::Start {
                tool: Tool::Debug,
                args: rest.to_string(),
            }
        }
        "debug_add_breakpoint" => {
            let bp = strip_outer_quotes(rest);
            if bp.is_empty() {
                return Ok(usage(verb));
            }
            SessionDirective::Gdb(format!("break {bp}"))
        }
        "debug_continue" => SessionDirective::Gdb("continue".into()),
        "debug_step" => {
            let n = strip_outer_quotes(rest);
            if n.is_empty() {
                SessionDirective::Gdb("stepi 1".into())
            } else {
                match n.parse::<u64>() {
                    Ok(n) if n > 0 => SessionDirective::Gdb(format!("stepi {n}")),
                    _ => return Ok(usage(verb)),
                }
            }
        }
        "debug_exec" => {
            let c = strip_outer_quotes(rest);
            if c.is_empty() {
                return Ok(usage(verb));
            }
            SessionDirective::Gdb(c.to_string())
        }
        "debug_stop" => SessionDirective::Stop(Tool::Debug),
        "connect_start" => {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.len() != 2 || parts[1].parse::<u16>().is_err() {
                return Ok(usage(verb));
            }
            SessionDirective::Start {
                tool: Tool::Connect,
                args: format!("{} {}", parts[0], parts[1]),
            }
        }
        "connect_sendline" => SessionDirective::SendLine(strip_outer_quotes(rest).to_string()),
        "connect_exec" => {
            let c = strip_outer_quotes(rest);
            if c.is_empty() {
                return Ok(usage(verb));
            }
            SessionDirective::ConnectExec(c.to_string())
        }
        "connect_stop" => SessionDirective::Stop(Tool::Connect),
        _ => return Err(NotAnIatCommand),
    };
    Ok(d)
}

pub fn is_iat_verb(verb: &str) -> bool {
    use crate::commands::ActionCategory;
    crate::commands::lookup(verb)
        .is_some_and(|c| matches!(c.category, ActionCategory::Debug | ActionCategory::INetwork))
}

/// Knobs for launching tools.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IatConfig {
    pub gdb_bin: String,
    /// Program implementing the connect REPL inside containers.
    pub connect_program: String,
    pub settle_ms: u64,
    pub connect_timeout_secs: f64,
}

impl Default for IatConfig {
    fn default() -> Self {
        IatConfig {
            gdb_bin: "gdb".into(),
            connect_program: "connect_repl".into(),
            settle_ms: DEFAULT_SETTLE.as_millis() as u64,
            connect_timeout_secs: 10.0,
        }
    }
}

impl IatConfig {
    pub fn settle(&self) -> Duration {
        Duration::from_millis(self.settle_ms)
    }
}

struct Active {
    handle: SessionHandle,
    session: Box<dyn Session>,
}

/// Owns the single live session of an environment.
#[derive(Default)]
pub struct SessionManager {
    active: Option<Active>,
    pub config: IatConfig,
}

pub fn refusal_text(tool: Tool) -> String {
    let spec = tool.spec();
    format!(
        "Interactive session already open. Please close the current interactive session: {} with the command: `{}`",
        spec.session_name, spec.stop_command
    )
}

pub fn stopped_text(tool: Tool) -> String {
    format!(
        "Interactive session {} stopped successfully",
        tool.spec().session_name
    )
}

pub fn no_session_text(tool: Tool) -> String {
    let start = match tool {
        Tool::Debug => "debug_start",
        Tool::Connect => "connect_start",
    };
    format!(
        "No {} session is currently running. Start one with `{start}` first.",
        tool.spec().session_name
    )
}

impl SessionManager {
    pub fn new(config: IatConfig) -> Self {
        SessionManager {
            active: None,
            config,
        }
    }

    pub fn handle(&self) -> Option<&SessionHandle> {
        self.active.as_ref().map(|a| &a.handle)
    }

    /// `(Interactive session: ...)` value.
    pub fn descriptor(&self) -> String {
        self.handle().map_or_else(|| "n/a".to_string(), |h| h.descriptor())
    }

    pub fn is_alive(&self) -> bool {
        self.active.is_some()
    }

    /// Starts a session. A live session yields the refusal text and is left
    /// untouched.
    pub fn start(
        &mut self,
        backend: &Backend,
        cwd: &str,
        tool: Tool,
        args: &str,
        limits: &ExecLimits,
    ) -> String {
        if let Some(active) = &self.active {
            return refusal_text(active.handle.tool);
        }
        let started = match tool {
            Tool::Debug => DebugSession::start(backend, cwd, args, &self.config, limits)
                .map(|(s, out, target)| (Box::new(s) as Box<dyn Session>, out, target)),
            Tool::Connect => {
                let mut parts = args.split_whitespace();
                let host = parts.next().unwrap_or_default().to_string();
                let port: u16 = parts.next().and_then(|p| p.parse().ok()).unwrap_or(0);
                let target = format!("{host} {port}");
                if backend.native_network() {
                    TcpSession::start(&host, port, &self.config, limits)
                        .map(|(s, out)| (Box::new(s) as Box<dyn Session>, out, target))
                } else {
                    ConnectReplSession::start(backend, cwd, &host, port, &self.config, limits)
                        .map(|(s, out)| (Box::new(s) as Box<dyn Session>, out, target))
                }
            }
        };
        match started {
            Ok((session, output, target)) => {
                self.active = Some(Active {
                    handle: SessionHandle {
                        tool,
                        target,
                        alive: true,
                    },
                    session,
                });
                output
            }
            // the tool's own error text, no session registered
            Err(output) => output,
        }
    }

    /// Sends a debugger line, a sendline payload or a connect control
    /// command to the live session of `tool`.
    pub fn send(&mut self, tool: Tool, directive: &SessionDirective, limits: &ExecLimits) -> String {
        let Some(active) = self.active.as_mut().filter(|a| a.handle.tool == tool) else {
            return no_session_text(tool);
        };
        let reply = active.session.send(directive, limits);
        if reply.broken {
            active.handle.alive = false;
            if let Some(mut a) = self.active.take() {
                a.session.stop();
            }
            let mut text = reply.text;
            if !text.is_empty() && !text.ends_with('\n') {
                text.push('\n');
            }
            text.push_str(SESSION_FAILED);
            return text;
        }
        reply.text
    }

    /// Stops the session of `tool`; idempotent.
    pub fn stop(&mut self, tool: Tool) -> String {
        match &self.active {
            Some(a) if a.handle.tool != tool => no_session_text(tool),
            _ => {
                self.stop_all();
                stopped_text(tool)
            }
        }
    }

    pub fn stop_all(&mut self) {
        if let Some(mut a) = self.active.take() {
            a.session.stop();
        }
    }

    /// Routes a translated directive.
    pub fn dispatch(
        &mut self,
        backend: &Backend,
        cwd: &str,
        directive: &SessionDirective,
        limits: &ExecLimits,
    ) -> String {
        match directive {
            SessionDirective::Start { tool, args } => self.start(backend, cwd, *tool, args, limits),
            SessionDirective::Gdb(_) => self.send(Tool::Debug, directive, limits),
            SessionDirective::SendLine(_) | SessionDirective::ConnectExec(_) => {
                self.send(Tool::Connect, directive, limits)
            }
            SessionDirective::Stop(tool) => self.stop(*tool),
            SessionDirective::Usage(text) => text.clone(),
        }
    }
}
