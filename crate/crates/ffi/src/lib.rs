//! C ABI for the agent runtime.
//!
//! Every function returns a [`CtfStatus`]. On failure the message is kept in
//! thread-local storage and can be fetched with [`ctf_last_error`]. Strings
//! handed out through `char **` parameters must be released with
//! [`ctf_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ctf_agent::agent::{run_challenge, RunConfig, RunSetup, Trajectory};
use ctf_agent::analyzer::{detect_leakage, summary_report};
use ctf_agent::model::ModelConfig;
use ctf_agent::parser::{detect_soliloquy, parse_response};
use ctf_agent::sandbox::SandboxConfig;
use ctf_agent::task::{load_challenge, verify_flag};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtfStatus {
    CtfOk = 0,
    CtfErrNull = 1,
    CtfErrUtf8 = 2,
    CtfErrIo = 3,
    CtfErrConfig = 4,
    CtfErrFormat = 5,
    CtfErrPanic = 6,
}

/// Soliloquy verdict for one response.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CtfSoliloquy {
    pub is_soliloquy: bool,
    pub code_block_count: usize,
    pub marker_count: usize,
}

/// A trajectory read from disk.
pub struct CtfTrajectory {
    inner: Trajectory,
}

/// A set of trajectories analysed together.
pub struct CtfCorpus {
    trajs: Vec<Trajectory>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Fail(CtfStatus, String);

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CtfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CtfStatus::CtfOk
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            CtfStatus::CtfErrPanic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(CtfStatus::CtfErrNull, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(CtfStatus::CtfErrUtf8, format!("{what} is not UTF-8")))
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(Fail(CtfStatus::CtfErrNull, format!("{what} is null")));
    }
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) {
    *out = CString::new(s.replace('\0', "\\u0000")).unwrap().into_raw();
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call on the same thread.
#[no_mangle]
pub extern "C" fn ctf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn ctf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `response` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctf_detect_soliloquy(response: *const c_char, out: *mut CtfSoliloquy) -> CtfStatus {
    guard(|| {
        let r = text(response, "response")?;
        non_null(out, "out")?;
        let v = detect_soliloquy(r);
        *out = CtfSoliloquy {
            is_soliloquy: v.is_soliloquy,
            code_block_count: v.code_block_count,
            marker_count: v.marker_count,
        };
        Ok(())
    })
}

/// Extracts the action from a model response. Returns `CTF_ERR_FORMAT`
/// with the format-error observation when there is no code block.
///
/// # Safety
/// `response` must be a NUL-terminated string; `action_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctf_parse_action(response: *const c_char, action_out: *mut *mut c_char) -> CtfStatus {
    guard(|| {
        let r = text(response, "response")?;
        non_null(action_out, "action_out")?;
        let parsed = parse_response(r).map_err(|e| Fail(CtfStatus::CtfErrFormat, e.observation))?;
        put_string(action_out, parsed.action);
        Ok(())
    })
}

/// Checks `candidate` against the flag of the challenge in `challenge_dir`.
///
/// # Safety
/// Pointers must be valid NUL-terminated strings; `correct` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctf_verify_flag(
    challenge_dir: *const c_char,
    candidate: *const c_char,
    correct: *mut bool,
) -> CtfStatus {
    guard(|| {
        let dir = text(challenge_dir, "challenge_dir")?;
        let cand = text(candidate, "candidate")?;
        non_null(correct, "correct")?;
        let c = load_challenge(dir).map_err(|e| Fail(CtfStatus::CtfErrConfig, e.to_string()))?;
        *correct = verify_flag(&c.flag, cand).correct;
        Ok(())
    })
}

/// Runs one episode with default run and sandbox settings. `out_path` may be
/// null; `exit_status_out` receives the exit status name.
///
/// # Safety
/// String pointers must be valid or, for `out_path`, null.
#[no_mangle]
pub unsafe extern "C" fn ctf_run_challenge(
    challenge_dir: *const c_char,
    model_config: *const c_char,
    out_path: *const c_char,
    exit_status_out: *mut *mut c_char,
) -> CtfStatus {
    guard(|| {
        let dir = text(challenge_dir, "challenge_dir")?;
        let model = text(model_config, "model_config")?;
        let out = if out_path.is_null() { None } else { Some(Path::new(text(out_path, "out_path")?)) };
        non_null(exit_status_out, "exit_status_out")?;
        let model_cfg =
            ModelConfig::from_file(Path::new(model)).map_err(|e| Fail(CtfStatus::CtfErrConfig, e.to_string()))?;
        let setup = RunSetup {
            model_cfg,
            run_cfg: RunConfig::default(),
            sandbox: SandboxConfig::default(),
            limiter: None,
        };
        let t = run_challenge(Path::new(dir), &setup, out).map_err(|e| Fail(CtfStatus::CtfErrIo, format!("{e:#}")))?;
        let status = t.exit_status().map(|s| s.as_str()).unwrap_or("unfinished");
        put_string(exit_status_out, status.to_string());
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctf_trajectory_open(path: *const c_char, out: *mut *mut CtfTrajectory) -> CtfStatus {
    guard(|| {
        let p = text(path, "path")?;
        non_null(out, "out")?;
        let inner = Trajectory::read(Path::new(p)).map_err(|e| Fail(CtfStatus::CtfErrIo, format!("{p}: {e}")))?;
        *out = Box::into_raw(Box::new(CtfTrajectory { inner }));
        Ok(())
    })
}

/// # Safety
/// `t` must come from `ctf_trajectory_open` or be null.
#[no_mangle]
pub unsafe extern "C" fn ctf_trajectory_free(t: *mut CtfTrajectory) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Number of steps; 0 for null.
///
/// # Safety
/// `t` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ctf_trajectory_steps(t: *const CtfTrajectory) -> usize {
    t.as_ref().map_or(0, |t| t.inner.steps.len())
}

/// Exit status name, or "unfinished" when the footer is missing.
///
/// # Safety
/// `t` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctf_trajectory_exit_status(t: *const CtfTrajectory, out: *mut *mut c_char) -> CtfStatus {
    guard(|| {
        non_null(t, "trajectory")?;
        non_null(out, "out")?;
        let s = (*t).inner.exit_status().map(|s| s.as_str()).unwrap_or("unfinished");
        put_string(out, s.to_string());
        Ok(())
    })
}

/// Leakage verdict as JSON (`applicable`, `leaked`, `rule`, `evidence`).
///
/// # Safety
/// `t` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctf_trajectory_leakage_json(t: *const CtfTrajectory, out: *mut *mut c_char) -> CtfStatus {
    guard(|| {
        non_null(t, "trajectory")?;
        non_null(out, "out")?;
        let v = detect_leakage(&(*t).inner, &[]);
        put_string(out, serde_json::to_string(&v).unwrap());
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn ctf_corpus_new() -> *mut CtfCorpus {
    Box::into_raw(Box::new(CtfCorpus { trajs: Vec::new() }))
}

/// Copies `t` into the corpus; the trajectory handle stays owned by the caller.
///
/// # Safety
/// Both handles must be live.
#[no_mangle]
pub unsafe extern "C" fn ctf_corpus_add(c: *mut CtfCorpus, t: *const CtfTrajectory) -> CtfStatus {
    guard(|| {
        non_null(c, "corpus")?;
        non_null(t, "trajectory")?;
        (*c).trajs.push((*t).inner.clone());
        Ok(())
    })
}

/// Summary report over the corpus as JSON.
///
/// # Safety
/// `c` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctf_corpus_report_json(c: *const CtfCorpus, out: *mut *mut c_char) -> CtfStatus {
    guard(|| {
        non_null(c, "corpus")?;
        non_null(out, "out")?;
        let r = summary_report(&(*c).trajs);
        put_string(out, serde_json::to_string(&r).unwrap());
        Ok(())
    })
}

/// # Safety
/// `c` must come from `ctf_corpus_new` or be null.
#[no_mangle]
pub unsafe extern "C" fn ctf_corpus_free(c: *mut CtfCorpus) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}
