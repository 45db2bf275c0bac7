//! A child process attached to a pseudo-terminal.

use std::fs::File;
use std::io::Write;
use std::os::fd::OwnedFd;
use std::os::unix::process::CommandExt;
use std::process::{Child, Command, Stdio};

use nix::pty::openpty;
use nix::sys::termios::{self, LocalFlags, SetArg};

use super::inbox::Inbox;

pub struct PtyProcess {
    child: Child,
    writer: File,
    pub inbox: Inbox,
}

impl PtyProcess {
    /// Spawns `cmd` as a session leader with the pty slave as its
    /// controlling terminal. Terminal echo is off so input never shows up
    /// in the returned output.
    pub fn spawn(mut cmd: Command) -> std::io::Result<PtyProcess> {
        let pty = openpty(None, None).map_err(std::io::Error::from)?;
        if let Ok(mut attrs) = termios::tcgetattr(&pty.slave) {
            attrs.local_flags.remove(LocalFlags::ECHO | LocalFlags::ECHONL);
            let _ = termios::tcsetattr(&pty.slave, SetArg::TCSANOW, &attrs);
        }
        let slave: OwnedFd = pty.slave;
        cmd.stdin(Stdio::from(slave.try_clone()?))
            .stdout(Stdio::from(slave.try_clone()?))
            .stderr(Stdio::from(slave.try_clone()?))
            .env("TERM", "dumb");
        unsafe {
            cmd.pre_exec(|| {
                nix::unistd::setsid().map_err(std::io::Error::from)?;
                if nix::libc::ioctl(0, nix::libc::TIOCSCTTY as _, 0) < 0 {
                    return Err(std::io::Error::last_os_error());
                }
                Ok(())
            });
        }
        let child = cmd.spawn()?;
        drop(slave);
        let master = File::from(pty.master);
        let reader = master.try_clone()?;
        Ok(PtyProcess {
            child,
            writer: master,
            inbox: Inbox::spawn(reader, "pty-reader"),
        })
    }

    pub fn write_all(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        self.writer.write_all(bytes)?;
        self.writer.flush()
    }

    pub fn has_exited(&mut self) -> bool {
        !matches!(self.child.try_wait(), Ok(None))
    }

    pub fn kill(&mut self) {
        if let Ok(None) = self.child.try_wait() {
            let _ = self.child.kill();
        }
        let _ = self.child.wait();
    }
}

impl Drop for PtyProcess {
    fn drop(&mut self) {
        self.kill();
    }
}
