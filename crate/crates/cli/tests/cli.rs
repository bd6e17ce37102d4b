use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use orgtrl::config::KEYS;

const SUBCOMMANDS: &[&str] = &[
    "gen-synth",
    "build-vocab",
    "stats",
    "train-elm",
    "precompute-soft",
    "train",
    "infer",
    "eval",
    "grad-check",
];

fn orgtrl(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orgtrl"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn desk() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/desk.cfg")
        .display()
        .to_string()
}

#[test]
fn every_subcommand_documents_every_key() {
    for sub in SUBCOMMANDS {
        let out = Command::new(env!("CARGO_BIN_EXE_orgtrl"))
            .args([sub, "--help"])
            .output()
            .unwrap();
        assert!(out.status.success(), "{sub} --help");
        let text = String::from_utf8_lossy(&out.stdout);
        for (key, _, _) in KEYS {
            assert!(text.contains(key), "{sub} help lacks {key}");
        }
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 3] = [
        &["frobnicate"],
        &["gen-synth", "--no-such-flag"],
        &["gen-synth", "--set", "no.such.key=1"],
    ];
    for args in cases {
        let out = orgtrl(args, dir.path());
        assert_eq!(out.status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn missing_manifest_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = orgtrl(&["build-vocab"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_synth_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        assert!(orgtrl(&["gen-synth", "--seed", "4"], dir.path())
            .status
            .success());
    }
    let manifest = |d: &tempfile::TempDir| fs::read(d.path().join("data/manifest.json")).unwrap();
    assert_eq!(manifest(&a), manifest(&b));
    let other = tempfile::tempdir().unwrap();
    orgtrl(&["gen-synth", "--seed", "5"], other.path());
    assert_ne!(manifest(&a), manifest(&other));
}

#[test]
fn lambda_zero_trains_on_cross_entropy_alone() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk();
    for stage in [
        "gen-synth",
        "build-vocab",
        "train-elm",
        "precompute-soft",
        "train",
    ] {
        let out = orgtrl(
            &[
                stage,
                "--config",
                &cfg,
                "--set",
                "trl.lambda=0",
                "--set",
                "train.epochs=2",
            ],
            dir.path(),
        );
        assert!(
            out.status.success(),
            "{stage}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let log = fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
    let mut lines = 0;
    for line in log.lines() {
        let entry: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(entry["loss"], entry["ce"]);
        lines += 1;
    }
    assert!(lines > 0);
}

#[test]
fn grad_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = orgtrl(&["grad-check", "--set", "gradcheck.samples=32"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("max_relative_error="));
}
