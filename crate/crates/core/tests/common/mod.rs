#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use edc::config::{BackendSet, RunConfig};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
}

pub fn replay_backends(replay: &Path) -> BackendSet {
    let mut cfg = RunConfig::default();
    cfg.use_replay(replay);
    BackendSet::from_config(&cfg, None).expect("replay backends")
}

pub fn edc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edc"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn edc")
}

pub fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Runs the full pipeline over a fixture scenario in replay mode; flags in
/// `extra` override the scenario defaults.
pub fn run_fixture(scenario: &str, out: &Path, extra: &[&str]) -> Output {
    let dir = fixtures().join(scenario);
    let defaults = [
        ("--dataset", dir.join("dataset.jsonl")),
        ("--few-shot", dir.join("few_shot.jsonl")),
        ("--replay", dir.join("replay")),
        ("--out", out.to_path_buf()),
    ];
    let mut args = vec!["run".to_string()];
    for (flag, value) in defaults {
        if !extra.contains(&flag) {
            args.push(flag.into());
            args.push(path(&value).into());
        }
    }
    args.extend(extra.iter().map(|s| s.to_string()));
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    edc(&args)
}

/// Compares `files` in `actual` with the checked-in copies in `golden`;
/// with `EDC_BLESS` set, overwrites the checked-in copies instead.
pub fn check_golden(actual: &Path, golden: &Path, files: &[&str]) -> Result<(), String> {
    let bless = std::env::var_os("EDC_BLESS").is_some();
    if bless {
        std::fs::create_dir_all(golden).map_err(|e| e.to_string())?;
    }
    for f in files {
        let got = std::fs::read(actual.join(f)).map_err(|e| format!("{f}: {e}"))?;
        let want_path = golden.join(f);
        if bless {
            std::fs::write(&want_path, &got).map_err(|e| e.to_string())?;
            continue;
        }
        let want =
            std::fs::read(&want_path).map_err(|e| format!("{}: {e}", want_path.display()))?;
        if got != want {
            return Err(format!("{f} differs from {}", want_path.display()));
        }
    }
    Ok(())
}
