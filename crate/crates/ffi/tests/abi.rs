use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use ctf_agent_ffi::*;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn c(s: impl AsRef<str>) -> CString {
    CString::new(s.as_ref()).unwrap()
}

unsafe fn take(p: *mut c_char) -> String {
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    ctf_string_free(p);
    s
}

fn last_error() -> String {
    let p = ctf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p).to_str().unwrap().to_string() }
}

#[test]
fn soliloquy_and_parse() {
    let r = c("DISCUSSION\nx\n```\nls\n```\n(Open file: n/a)\n(Current directory: /x)\n(Interactive session: n/a)\nbash-$\n```\ncat a\n```");
    let mut v = CtfSoliloquy::default();
    assert_eq!(unsafe { ctf_detect_soliloquy(r.as_ptr(), &mut v) }, CtfStatus::CtfOk);
    assert!(v.is_soliloquy);
    assert_eq!((v.code_block_count, v.marker_count), (2, 4));
    assert!(ctf_last_error().is_null());

    let mut action = ptr::null_mut();
    assert_eq!(unsafe { ctf_parse_action(r.as_ptr(), &mut action) }, CtfStatus::CtfOk);
    assert_eq!(unsafe { take(action) }, "ls");
    let prose = c("no code here");
    assert_eq!(unsafe { ctf_parse_action(prose.as_ptr(), &mut action) }, CtfStatus::CtfErrFormat);
    assert!(last_error().starts_with("Your output was not formatted correctly."));
}

#[test]
fn null_and_bad_utf8_are_errors() {
    let mut v = CtfSoliloquy::default();
    assert_eq!(unsafe { ctf_detect_soliloquy(ptr::null(), &mut v) }, CtfStatus::CtfErrNull);
    assert_eq!(last_error(), "response is null");
    let bad = CString::new(vec![0xffu8, 0xfe]).unwrap();
    assert_eq!(unsafe { ctf_detect_soliloquy(bad.as_ptr(), &mut v) }, CtfStatus::CtfErrUtf8);
    let ok = c("x");
    assert_eq!(unsafe { ctf_detect_soliloquy(ok.as_ptr(), ptr::null_mut()) }, CtfStatus::CtfErrNull);
    unsafe {
        ctf_string_free(ptr::null_mut());
        ctf_trajectory_free(ptr::null_mut());
        ctf_corpus_free(ptr::null_mut());
        assert_eq!(ctf_trajectory_steps(ptr::null()), 0);
    }
}

#[test]
fn verify_flag() {
    let dir = c(fixtures().join("toy_xor").to_str().unwrap());
    let mut ok = false;
    let good = c("flag{x0r_w1th_4_r3us3d_k3y}");
    assert_eq!(unsafe { ctf_verify_flag(dir.as_ptr(), good.as_ptr(), &mut ok) }, CtfStatus::CtfOk);
    assert!(ok);
    let wrong = c("flag{nope}");
    assert_eq!(unsafe { ctf_verify_flag(dir.as_ptr(), wrong.as_ptr(), &mut ok) }, CtfStatus::CtfOk);
    assert!(!ok);
    let missing = c("/nonexistent");
    assert_eq!(unsafe { ctf_verify_flag(missing.as_ptr(), good.as_ptr(), &mut ok) }, CtfStatus::CtfErrConfig);
}

#[test]
fn run_then_analyze_through_handles() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("t.jsonl");
    let dir = c(fixtures().join("toy_xor").to_str().unwrap());
    let model = c(fixtures().join("models/toy_xor.toml").to_str().unwrap());
    let out_c = c(out.to_str().unwrap());
    unsafe {
        let mut status = ptr::null_mut();
        assert_eq!(ctf_run_challenge(dir.as_ptr(), model.as_ptr(), out_c.as_ptr(), &mut status), CtfStatus::CtfOk);
        assert_eq!(take(status), "submitted");

        let mut t = ptr::null_mut();
        assert_eq!(ctf_trajectory_open(out_c.as_ptr(), &mut t), CtfStatus::CtfOk);
        assert_eq!(ctf_trajectory_steps(t), 6);
        let mut s = ptr::null_mut();
        assert_eq!(ctf_trajectory_exit_status(t, &mut s), CtfStatus::CtfOk);
        assert_eq!(take(s), "submitted");
        let mut leak = ptr::null_mut();
        assert_eq!(ctf_trajectory_leakage_json(t, &mut leak), CtfStatus::CtfOk);
        let leak: serde_json::Value = serde_json::from_str(&take(leak)).unwrap();
        assert_eq!(leak["leaked"], false);
        assert_eq!(leak["applicable"], true);

        let corpus = ctf_corpus_new();
        assert_eq!(ctf_corpus_add(corpus, t), CtfStatus::CtfOk);
        assert_eq!(ctf_corpus_add(corpus, t), CtfStatus::CtfOk);
        ctf_trajectory_free(t);
        let mut report = ptr::null_mut();
        assert_eq!(ctf_corpus_report_json(corpus, &mut report), CtfStatus::CtfOk);
        let report: serde_json::Value = serde_json::from_str(&take(report)).unwrap();
        assert_eq!(report["runs"], 2);
        assert_eq!(report["solved"], 2);
        assert_eq!(report["total_steps"], 12);
        ctf_corpus_free(corpus);

        let missing = c(tmp.path().join("none.jsonl").to_str().unwrap());
        let mut t = ptr::null_mut();
        assert_eq!(ctf_trajectory_open(missing.as_ptr(), &mut t), CtfStatus::CtfErrIo);
        assert!(t.is_null());
        assert!(last_error().contains("none.jsonl"));
    }
}

#[test]
fn header_matches_the_exports() {
    let h = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ctf_agent.h")).unwrap();
    for sym in [
        "CTF_OK = 0",
        "CTF_ERR_NULL = 1",
        "typedef struct CtfTrajectory CtfTrajectory;",
        "typedef struct CtfCorpus CtfCorpus;",
        "const char *ctf_last_error(void);",
        "void ctf_string_free(char *s);",
        "enum CtfStatus ctf_trajectory_open(const char *path, struct CtfTrajectory **out);",
        "struct CtfCorpus *ctf_corpus_new(void);",
        "enum CtfStatus ctf_run_challenge(",
    ] {
        assert!(h.contains(sym), "missing {sym}");
    }
}

#[test]
fn c_program_links_against_the_static_library() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let target = std::env::var_os("CARGO_TARGET_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| manifest.join("../../target"));
    let lib = target.join("debug/libctf_agent_ffi.a");
    if !lib.exists() {
        eprintln!("skipping: {} not built", lib.display());
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "ctf_agent.h"
int main(int argc, char **argv) {
    CtfSoliloquy v;
    if (ctf_detect_soliloquy("```\nls\n```", &v) != CTF_OK || v.is_soliloquy || v.code_block_count != 1) return 1;
    bool ok = false;
    if (ctf_verify_flag(argv[1], "flag{x0r_w1th_4_r3us3d_k3y}", &ok) != CTF_OK || !ok) return 2;
    if (ctf_detect_soliloquy(NULL, &v) != CTF_ERR_NULL || ctf_last_error() == NULL) return 3;
    CtfCorpus *c = ctf_corpus_new();
    char *json = NULL;
    if (ctf_corpus_report_json(c, &json) != CTF_OK) return 4;
    puts(json);
    ctf_string_free(json);
    ctf_corpus_free(c);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = tmp.path().join("main");
    let status = std::process::Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = std::process::Command::new(&exe).arg(fixtures().join("toy_xor")).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("\"runs\":0"));
}
