use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const STUDY: &str = r#"
rho = 1.0
replicas = 4
seed = 11
checkpoints = [0.0, 0.5]
output = "results"

[kernel]
name = "expdiff"

[initial]
kind = "exponential"
rate = 1.0

[solver]
h = 0.1
m = 300

[[schedule]]
l = 10
eps = 0.5

[[schedule]]
l = 20
eps = 0.25

[aldous]
tau = 0.3
deltas = [0.2, 0.1]
l = 20
eps = 0.25
replicas = 16

[oracle]
replicas = 400
times = [0.5]

[[oracle.instances]]
n = 3
l = 2
start = "condensed"
"#;

fn cgedg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgedg"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("study.toml"), STUDY).unwrap();
    dir
}

#[test]
fn converge_writes_csv_and_jsonl() {
    let dir = setup();
    let out = cgedg(dir.path(), &["converge", "--config", "study.toml", "--threads", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("results/converge.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("schema,L,N,eps,t,"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.starts_with("cgedg.converge.v1,")));
    assert!(!csv.contains('\r'));
    let jsonl = fs::read_to_string(dir.path().join("results/converge_replicas.jsonl")).unwrap();
    // Two entries, four replicas, two checkpoints.
    assert_eq!(jsonl.lines().count(), 2 * 4 * 2);
}

#[test]
fn seed_override_is_reproducible() {
    let dir = setup();
    let run = |seed: &str, out: &str| {
        let o = cgedg(
            dir.path(),
            &["converge", "--config", "study.toml", "--seed", seed, "--replicas", "3", "--out", out],
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read_to_string(dir.path().join(out).join("converge.csv")).unwrap()
    };
    let a = run("5", "a");
    let b = run("5", "b");
    let c = run("6", "c");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn remaining_subcommands_write_their_outputs() {
    let dir = setup();
    let cases: [(&str, &[&str]); 4] = [
        ("aldous", &["aldous.csv"]),
        ("oracle", &["oracle.jsonl"]),
        ("check-kernel", &["check_kernel.json"]),
        ("solve", &["solution.csv", "solution.bin", "solver_report.json", "final_measure.csv"]),
    ];
    for (cmd, files) in cases {
        let out = cgedg(dir.path(), &[cmd, "--config", "study.toml", "--out", "o"]);
        assert!(out.status.code().is_some_and(|c| c < 2), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        for f in files {
            assert!(dir.path().join("o").join(f).is_file(), "{cmd} did not write {f}");
        }
    }
    let bin = fs::read(dir.path().join("o/solution.bin")).unwrap();
    assert_eq!(&bin[..16], b"CGEDG-CKPT-v001\0");
    let cert: String = fs::read_to_string(dir.path().join("o/check_kernel.json")).unwrap();
    assert!(cert.contains("\"passed\": true"));
}

#[test]
fn bad_config_fails_cleanly() {
    let dir = setup();
    fs::write(dir.path().join("bad.toml"), format!("{STUDY}\nunknown_key = 1\n")).unwrap();
    let out = cgedg(dir.path(), &["solve", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    let missing = cgedg(dir.path(), &["solve", "--config", "nope.toml"]);
    assert_eq!(missing.status.code(), Some(2));
    let usage = cgedg(dir.path(), &["frobnicate"]);
    assert!(!usage.status.success());
}
