//! Runs the `pickpoint` binary.

use std::path::Path;
use std::process::Command;

use serde_json::Value;

pub struct Outcome {
    pub code: i32,
    pub summary: Value,
    pub stderr: String,
}

pub fn pickpoint(args: &[&str]) -> Outcome {
    pickpoint_with_threads(args, None)
}

pub fn pickpoint_with_threads(args: &[&str], threads: Option<usize>) -> Outcome {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pickpoint"));
    cmd.args(args);
    if let Some(n) = threads {
        cmd.env("RAYON_NUM_THREADS", n.to_string());
    }
    let out = cmd.output().expect("binary runs");
    let stdout = String::from_utf8(out.stdout).unwrap();
    let summary = stdout
        .lines()
        .last()
        .map(|l| serde_json::from_str(l).unwrap_or(Value::Null))
        .unwrap_or(Value::Null);
    Outcome {
        code: out.status.code().unwrap_or(-1),
        summary,
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

pub fn ok(args: &[&str]) -> Value {
    let o = pickpoint(args);
    assert_eq!(o.code, 0, "{args:?}: {}", o.stderr);
    o.summary
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}
