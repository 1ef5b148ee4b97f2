#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

/// Set to regenerate the files under `tests/golden`.
pub const UPDATE_ENV: &str = "MEDPLAN_UPDATE_GOLDEN";

pub const SUBJECTIVE: &str = "chest tightness on exertion";
pub const OBJECTIVE: &str = "BP 150/95 HR 90";

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn golden_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn medplan<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_medplan")).args(args).output().expect("binary runs");
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).expect("utf-8 stdout"),
        stderr: String::from_utf8(out.stderr).expect("utf-8 stderr"),
    }
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

pub fn config() -> String {
    s(&fixture("medplan.toml"))
}

/// `generate` on the ten-note knowledge base for patient Q1.
pub fn generate(single_pass: bool, json: bool) -> Output {
    let mut args = vec!["--config".to_string(), config()];
    if json {
        args.push("--json".into());
    }
    args.extend([
        "generate".into(),
        if single_pass { "--single-pass" } else { "--two-stage" }.into(),
        "--kb-corpus".into(),
        s(&fixture("kb_notes.jsonl")),
        "--history".into(),
        s(&fixture("history.jsonl")),
        "--mrn".into(),
        "Q1".into(),
        "--subjective".into(),
        SUBJECTIVE.into(),
        "--objective".into(),
        OBJECTIVE.into(),
    ]);
    medplan(&args)
}

/// `eval` on the synthetic fixture corpus, writing into `out`.
pub fn eval(out: &Path) -> Output {
    medplan(&["--config".to_string(), config(), "eval".into(), s(&fixture("corpus.jsonl")), "--out".into(), s(out)])
}

pub fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn updating() -> bool {
    std::env::var_os(UPDATE_ENV).is_some()
}

pub fn check_golden(name: &str, actual: &str) -> Result<(), String> {
    let path = golden_path(name);
    if updating() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return Ok(());
    }
    let want = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if want == actual {
        Ok(())
    } else {
        Err(format!("{name} differs from golden\n--- golden\n{want}\n--- actual\n{actual}"))
    }
}

pub fn check_golden_tree(name: &str, dir: &Path) -> Result<(), String> {
    let path = golden_path(name);
    let actual = read_tree(dir);
    if updating() {
        let _ = std::fs::remove_dir_all(&path);
        for (rel, bytes) in &actual {
            let p = path.join(rel);
            std::fs::create_dir_all(p.parent().unwrap()).unwrap();
            std::fs::write(p, bytes).unwrap();
        }
        return Ok(());
    }
    let want = read_tree(&path);
    if want.keys().ne(actual.keys()) {
        return Err(format!("{name}: files {:?} != golden {:?}", actual.keys().collect::<Vec<_>>(), want.keys().collect::<Vec<_>>()));
    }
    for (rel, bytes) in &actual {
        if want[rel] != *bytes {
            return Err(format!("{name}/{rel} differs from golden"));
        }
    }
    Ok(())
}
