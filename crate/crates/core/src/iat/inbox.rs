//! Background reader that keeps draining a session's output between turns.

use std::io::Read;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

enum Event {
    Data(Vec<u8>),
    Eof,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadEnd {
    /// The prompt pattern appeared at the end of the output.
    Prompt,
    /// No bytes for the settle window.
    Settled,
    /// No bytes for the no-output timeout while waiting for a prompt.
    Timeout,
    /// The other side closed.
    Eof,
}

pub struct Inbox {
    rx: Receiver<Event>,
    pending: Vec<u8>,
    eof: bool,
}

impl Inbox {
    pub fn spawn(mut reader: impl Read + Send + 'static, name: &str) -> Inbox {
        let (tx, rx) = mpsc::channel();
        std::thread::Builder::new()
            .name(name.to_string())
            .spawn(move || {
                let mut chunk = [0u8; 8192];
                loop {
                    match reader.read(&mut chunk) {
                        Ok(0) | Err(_) => {
                            let _ = tx.send(Event::Eof);
                            return;
                        }
                        Ok(n) => {
                            if tx.send(Event::Data(chunk[..n].to_vec())).is_err() {
                                return;
                            }
                        }
                    }
                }
            })
            .expect("spawn reader thread");
        Inbox {
            rx,
            pending: Vec::new(),
            eof: false,
        }
    }

    pub fn is_eof(&self) -> bool {
        self.eof
    }

    fn pull(&mut self, wait: Duration) -> bool {
        match self.rx.recv_timeout(wait) {
            Ok(Event::Data(d)) => {
                self.pending.extend_from_slice(&d);
                true
            }
            Ok(Event::Eof) | Err(RecvTimeoutError::Disconnected) => {
                self.eof = true;
                false
            }
            Err(RecvTimeoutError::Timeout) => false,
        }
    }

    /// Collects output until the prompt shows up at the end of the buffer
    /// (when `prompt` is set) or until `settle` passes without bytes. Never
    /// waits longer than `no_output` between bytes. Output that arrived
    /// while nobody was reading comes first.
    pub fn read_response(
        &mut self,
        settle: Duration,
        no_output: Duration,
        prompt: Option<&[u8]>,
    ) -> (Vec<u8>, ReadEnd) {
        let mut last_byte = Instant::now();
        // drain whatever is already queued without waiting
        while self.pull(Duration::ZERO) {}
        loop {
            if let Some(p) = prompt {
                if self.pending.ends_with(p) {
                    let out = std::mem::take(&mut self.pending);
                    return (out, ReadEnd::Prompt);
                }
            }
            if self.eof {
                return (std::mem::take(&mut self.pending), ReadEnd::Eof);
            }
            let window = if prompt.is_some() { no_output } else { settle.min(no_output) };
            let deadline = last_byte + window;
            let wait = deadline.saturating_duration_since(Instant::now());
            if self.pull(wait) {
                last_byte = Instant::now();
                continue;
            }
            if self.eof {
                continue;
            }
            if Instant::now() >= deadline {
                let out = std::mem::take(&mut self.pending);
                let end = if prompt.is_some() || no_output < settle {
                    ReadEnd::Timeout
                } else {
                    ReadEnd::Settled
                };
                return (out, end);
            }
        }
    }
}
