//! Process-tree helpers for interrupting commands run by the local shell.

use std::collections::HashMap;

use nix::sys::signal::{kill, Signal};
use nix::unistd::Pid;

fn parent_map() -> HashMap<i32, Vec<i32>> {
    let mut children: HashMap<i32, Vec<i32>> = HashMap::new();
    let Ok(entries) = std::fs::read_dir("/proc") else {
        return children;
    };
    for entry in entries.flatten() {
        let Some(pid) = entry.file_name().to_str().and_then(|s| s.parse::<i32>().ok()) else {
            continue;
        };
        let Ok(stat) = std::fs::read_to_string(entry.path().join("stat")) else {
            continue;
        };
        // comm may contain spaces and parens; fields resume after the last ')'
        let Some(rest) = stat.rfind(')').map(|i| &stat[i + 1..]) else {
            continue;
        };
        let mut fields = rest.split_whitespace();
        let _state = fields.next();
        if let Some(ppid) = fields.next().and_then(|s| s.parse::<i32>().ok()) {
            children.entry(ppid).or_default().push(pid);
        }
    }
    children
}

/// All transitive children of `root`, parents before children.
pub fn descendants(root: i32) -> Vec<i32> {
    let map = parent_map();
    let mut out = Vec::new();
    let mut stack = vec![root];
    while let Some(pid) = stack.pop() {
        if let Some(kids) = map.get(&pid) {
            for &k in kids {
                out.push(k);
                stack.push(k);
            }
        }
    }
    out
}

/// SIGKILLs every descendant of `root`, leaving `root` itself alive.
pub fn kill_descendants(root: i32) {
    // stop first so nothing forks while we walk the tree
    let procs = descendants(root);
    for &pid in &procs {
        let _ = kill(Pid::from_raw(pid), Signal::SIGSTOP);
    }
    for &pid in descendants(root).iter().chain(procs.iter()) {
        let _ = kill(Pid::from_raw(pid), Signal::SIGKILL);
    }
}
