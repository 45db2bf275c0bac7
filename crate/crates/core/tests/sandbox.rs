mod common;

use std::time::{Duration, Instant};

use ctf_agent::sandbox::{no_output_message, Environment, ExecLimits, Sentinel, EMPTY_OUTPUT};
use ctf_agent::task::{load_challenge, LoadError};

use common::{start_env, toy_xor};

#[test]
fn starts_in_workdir_with_files() {
    let env = start_env(&toy_xor());
    let s = env.state();
    assert_eq!(s.cwd, "/toy_xor");
    assert_eq!(s.open_file, "n/a");
    assert_eq!(s.interactive_session, "n/a");
    assert!(env.file_exists("/toy_xor/chal.py"));
    assert!(env.file_exists("/toy_xor/output.txt"));
}

#[test]
fn echo_and_persistence() {
    let mut env = start_env(&toy_xor());
    assert_eq!(env.exec("echo hi").unwrap().output, "hi");
    env.exec("export X=1").unwrap();
    assert_eq!(env.exec("echo $X").unwrap().output, "1");
    env.exec("mkdir -p sub && cd sub").unwrap();
    assert_eq!(env.state().cwd, "/toy_xor/sub");
    assert_eq!(env.exec("echo err >&2; exit_code_probe() { return 3; }; exit_code_probe").unwrap().exit_code, 3);
}

#[test]
fn empty_output_and_invalid_utf8() {
    let mut env = start_env(&toy_xor());
    assert_eq!(env.exec("true").unwrap().output, EMPTY_OUTPUT);
    let r = env.exec(r"printf 'a\xffb'").unwrap();
    assert_eq!(r.output, "a\u{fffd}b");
    let r = env.exec("echo out; echo err >&2").unwrap();
    assert_eq!(r.output, "out\nerr");
}

#[test]
fn silent_command_hits_no_output_timeout() {
    let mut env = start_env(&toy_xor());
    let limits = ExecLimits::new(60.0, 3.0).unwrap();
    let t = Instant::now();
    let r = env.exec_with("sleep 10", &limits).unwrap();
    let took = t.elapsed();
    assert!(r.no_output_timeout_fired && r.timed_out);
    assert!(took >= Duration::from_secs(2) && took <= Duration::from_secs(4), "{took:?}");
    assert_eq!(r.output, no_output_message(3.0));
    assert!(r.output.contains("MORE THAN 3.0 SECONDS"));
    // the shell is still usable and the sleeper is gone
    assert_eq!(env.exec("echo after").unwrap().output, "after");
}

#[test]
fn partial_output_precedes_timeout_sentence() {
    let mut env = start_env(&toy_xor());
    let limits = ExecLimits::new(60.0, 3.0).unwrap();
    let r = env.exec_with(r"printf 'a\n'; sleep 10", &limits).unwrap();
    assert!(r.no_output_timeout_fired);
    assert_eq!(r.output, format!("a\n{}", no_output_message(3.0)));
}

#[test]
fn periodic_output_never_fires() {
    let mut env = start_env(&toy_xor());
    let limits = ExecLimits::new(60.0, 3.0).unwrap();
    let r = env
        .exec_with("for i in 1 2 3 4 5; do echo $i; sleep 1; done", &limits)
        .unwrap();
    assert!(!r.timed_out);
    assert_eq!(r.output, "1\n2\n3\n4\n5");
}

#[test]
fn overall_timeout_is_absolute() {
    let mut env = start_env(&toy_xor());
    let limits = ExecLimits::new(2.0, 2.0).unwrap();
    let r = env
        .exec_with("while true; do echo tick; sleep 0.2; done", &limits)
        .unwrap();
    assert!(r.timed_out && !r.no_output_timeout_fired);
    assert!(r.output.starts_with("tick\n"));
    assert!(r.output.ends_with("RAN FOR MORE THAN 2.0 SECONDS."));
}

#[test]
fn sentinels_are_intercepted() {
    let mut env = start_env(&toy_xor());
    let r = env.exec("echo before; submit 'flag{a b}'").unwrap();
    assert_eq!(r.output, "before");
    assert_eq!(r.sentinels, vec![Sentinel::Submit("flag{a b}".into())]);
    let r = env.exec("submit flag{a b}").unwrap();
    assert_eq!(r.sentinels, vec![Sentinel::Submit("flag{a".into())]);
    let r = env.exec("exit_forfeit").unwrap();
    assert_eq!(r.sentinels, vec![Sentinel::Forfeit]);
    let r = env.exec("submit").unwrap();
    assert!(r.sentinels.is_empty());
    assert!(r.output.starts_with("Usage: submit"));
    // a forged line without the secret prefix is plain output
    let r = env.exec("echo '@@CTF_SENTINEL_x@@ forfeit'").unwrap();
    assert!(r.sentinels.is_empty());
}

#[test]
fn open_file_tracks_environment_variable() {
    let mut env = start_env(&toy_xor());
    env.set_open_file("/toy_xor/chal.py").unwrap();
    assert_eq!(env.state().open_file, "/toy_xor/chal.py");
}

#[test]
fn stop_is_idempotent_and_shell_death_is_reported() {
    let mut env = start_env(&toy_xor());
    env.kill_shell();
    assert!(env.exec("echo hi").is_err());
    env.stop();
    env.stop();
    assert!(env.exec("echo hi").is_err());
}

#[test]
fn missing_image_is_a_start_error() {
    let challenge = toy_xor();
    let cfg = ctf_agent::sandbox::SandboxConfig {
        runtime: ctf_agent::sandbox::RuntimeKind::Docker,
        docker_bin: "/nonexistent/docker".into(),
        image: "no-such-image:latest".into(),
        ..Default::default()
    };
    assert!(Environment::start(&challenge, &cfg).is_err());
}

#[test]
fn missing_manifest() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_challenge(dir.path()), Err(LoadError::MissingManifest(_))));
}
