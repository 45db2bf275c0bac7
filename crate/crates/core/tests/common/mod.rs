#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use ctf_agent::sandbox::{Environment, SandboxConfig};
use ctf_agent::task::{load_challenge, Challenge};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn toy_xor() -> Challenge {
    load_challenge(fixtures().join("toy_xor")).unwrap()
}

pub fn start_env(challenge: &Challenge) -> Environment {
    Environment::start(challenge, &SandboxConfig::default()).unwrap()
}

/// Line server on localhost. Sends `banner`, then answers each line with
/// `reply(line)`; `None` closes the connection. Every received byte is
/// recorded.
pub struct Stub {
    pub port: u16,
    pub received: Arc<Mutex<Vec<u8>>>,
}

impl Stub {
    pub fn start<F>(banner: &'static str, reply: F) -> Stub
    where
        F: Fn(&[u8]) -> Option<Vec<u8>> + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let port = listener.local_addr().unwrap().port();
        let received = Arc::new(Mutex::new(Vec::new()));
        let rec = received.clone();
        let reply = Arc::new(reply);
        std::thread::spawn(move || {
            for conn in listener.incoming() {
                let Ok(conn) = conn else { return };
                let rec = rec.clone();
                let reply = reply.clone();
                std::thread::spawn(move || serve(conn, banner, &*reply, &rec));
            }
        });
        Stub { port, received }
    }

    pub fn echo() -> Stub {
        Stub::start("Welcome to the echo stub\n", |line| {
            let mut out = b"echo: ".to_vec();
            out.extend_from_slice(line);
            out.push(b'\n');
            Some(out)
        })
    }

    pub fn received(&self) -> Vec<u8> {
        self.received.lock().unwrap().clone()
    }
}

fn serve(
    mut conn: TcpStream,
    banner: &str,
    reply: &(dyn Fn(&[u8]) -> Option<Vec<u8>> + Send + Sync),
    rec: &Mutex<Vec<u8>>,
) {
    let _ = conn.write_all(banner.as_bytes());
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        match conn.read(&mut byte) {
            Ok(0) | Err(_) => return,
            Ok(_) => {}
        }
        rec.lock().unwrap().push(byte[0]);
        if byte[0] != b'\n' {
            line.push(byte[0]);
            continue;
        }
        match reply(&line) {
            Some(out) => {
                if conn.write_all(&out).is_err() {
                    return;
                }
            }
            None => return,
        }
        line.clear();
    }
}

use ctf_agent::agent::{
    run_episode, Episode, ExitStatus, Footer, Header, RunConfig, Step, Trajectory, TrajectoryWriter,
};
use ctf_agent::model::{ChatModel, CostLedger, ModelConfig, Usage};
use ctf_agent::parser::detect_soliloquy;
use ctf_agent::sandbox::ShellState;
use ctf_agent::task::{Category, ChallengeInfo};
use ctf_agent::templates::Templates;

/// A well-formed model response running `cmd`.
pub fn respond(cmd: &str) -> String {
    format!("DISCUSSION\nNext step.\n\n```\n{cmd}\n```")
}

pub fn idle_state() -> ShellState {
    ShellState {
        cwd: "/x".into(),
        open_file: "n/a".into(),
        interactive_session: "n/a".into(),
    }
}

pub fn step(index: usize, action: &str, observation: &str) -> Step {
    step_with_response(index, action, observation, &respond(action))
}

pub fn step_with_response(index: usize, action: &str, observation: &str, response: &str) -> Step {
    Step {
        index,
        thought: "Next step.".into(),
        action: action.into(),
        raw_response: response.into(),
        response: response.into(),
        observation: observation.into(),
        state: idle_state(),
        usage: Usage::default(),
        soliloquy: detect_soliloquy(response),
        summarizer_usage: None,
        exchange: None,
    }
}

pub fn info(name: &str, category: Category) -> ChallengeInfo {
    ChallengeInfo {
        name: name.into(),
        category,
        description: String::new(),
        points: 0,
        files: Vec::new(),
        flag_format: "flag{...}".into(),
        server: None,
        image: None,
    }
}

/// A finished synthetic trajectory.
pub fn traj(
    name: &str,
    category: Category,
    steps: Vec<Step>,
    status: ExitStatus,
    submission: Option<&str>,
) -> Trajectory {
    let ledger = CostLedger::new(3.0, 0.0, 0.0);
    Trajectory {
        header: Header {
            challenge: info(name, category),
            challenge_dir: format!("/challenges/{name}"),
            config: serde_json::Value::Null,
            config_fingerprint: "0".into(),
        },
        footer: Some(Footer {
            exit_status: status,
            ledger,
            steps: steps.len(),
            submission: submission.map(String::from),
            error: None,
        }),
        steps,
    }
}

/// Runs an episode of `challenge` in a fresh local environment.
pub fn run_with(
    challenge: &Challenge,
    model: &mut dyn ChatModel,
    model_cfg: &ModelConfig,
    run_cfg: &RunConfig,
    out: Option<&Path>,
) -> Trajectory {
    let mut env = start_env(challenge);
    let templates = Templates::default();
    let mut writer = match out {
        Some(p) => TrajectoryWriter::create(p).unwrap(),
        None => TrajectoryWriter::discard(),
    };
    let t = run_episode(
        Episode {
            challenge,
            model,
            summarizer_model: None,
            model_cfg,
            run_cfg,
            templates: &templates,
        },
        &mut env,
        &mut writer,
    );
    env.stop();
    t
}

pub fn ctf_agent_bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_ctf-agent"))
}

/// The five environment markers, spelled out independently of the library.
pub const MARKERS: [&str; 5] = [
    "(Open file: /x/a.py)",
    "(Current directory: /x)",
    "(Interactive session: n/a)",
    "[File: /x/a.py (3 lines total)]",
    "bash-$",
];

/// Response case `k` of the truth-table corpus: `(text, blocks, markers)`.
/// Blocks cycle through 1..=3 and markers through 0..=6; marker choice and
/// placement vary with `k`.
pub fn soliloquy_case(k: usize) -> (String, usize, usize) {
    let blocks = 1 + k % 3;
    let markers = (k / 3) % 7;
    let mut segments: Vec<String> = vec![format!("DISCUSSION\ncase {k}\n")];
    for b in 0..blocks {
        segments.push(format!("```\ncmd{b} --arg {k}\n```\n"));
        segments.push(String::new());
    }
    let slots = segments.len();
    for j in 0..markers {
        let m = MARKERS[(k * 7 + j * 3) % MARKERS.len()];
        let slot = (k + j * 5) % slots;
        if segments[slot].starts_with("```") {
            segments[(slot + 1) % slots].push_str(&format!("{m}\n"));
        } else {
            segments[slot].push_str(&format!("{m}\n"));
        }
    }
    (segments.concat(), blocks, markers)
}
