use std::path::Path;
use std::process::{Command, Output};

fn posym(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posym"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn verify_theory_passes_by_default() {
    let dir = tempfile::tempdir().unwrap();
    let o = posym(&["verify-theory", "--fuzz-samples", "2000"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("verify_report.json")).unwrap()).unwrap();
    assert_eq!(report["meta"]["seed"], 0);
    let checks = report["data"]["checks"].as_array().unwrap();
    assert!(checks.iter().all(|c| c["status"] == "pass"), "{checks:?}");
    assert!(checks
        .iter()
        .any(|c| c["name"] == "exclusion_fuzz" && c["checked"] == 2000));
}

#[test]
fn corrupted_h_pos_is_named_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = posym(
        &["verify-theory", "--fuzz-samples", "100", "--corrupt-h-pos"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    let report = std::fs::read_to_string(dir.path().join("verify_report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    let failed: Vec<&str> = v["data"]["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["status"] == "fail")
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert!(failed.contains(&"h_pos_solves_index"), "{failed:?}");
}

#[test]
fn zero_fuzz_is_skipped_and_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let o = posym(&["verify-theory", "--fuzz-samples", "0"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).to_lowercase().contains("skipped"), "{}", stdout(&o));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"no_such_field": 1}"#).unwrap();
    let o = posym(&["verify-theory", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let o = posym(&["score", "--checkpoint", "/definitely/missing.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    std::fs::write(&cfg, r#"{"train": {"epochs": 0}}"#).unwrap();
    let o = posym(&["sweep", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn score_is_reproducible_and_stamped() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(posym(&["score", "--seed", "4"], a.path()).status.code(), Some(0));
    assert_eq!(
        posym(&["score", "--seed", "4", "--workers", "3"], b.path())
            .status
            .code(),
        Some(0)
    );
    let csv_a = std::fs::read_to_string(a.path().join("scores.csv")).unwrap();
    let csv_b = std::fs::read_to_string(b.path().join("scores.csv")).unwrap();
    assert_eq!(csv_a, csv_b);
    let first = csv_a.lines().next().unwrap();
    assert!(
        first.starts_with("# posym ") && first.contains("config=") && first.ends_with("seed=4"),
        "{first}"
    );
    assert!(!csv_a.contains('\r'));
    let svg = std::fs::read_to_string(a.path().join("ps_plane.svg")).unwrap();
    assert!(svg.contains("seed=4"));
}

#[test]
fn deleting_plots_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let first = posym(&["shapes"], dir.path());
    let svgs: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "svg"))
        .collect();
    assert!(!svgs.is_empty());
    let verdicts = std::fs::read(dir.path().join("shape_verdicts.json")).unwrap();
    for p in svgs {
        std::fs::remove_file(p).unwrap();
    }
    let second = posym(&["shapes"], dir.path());
    assert_eq!(first.status.code(), second.status.code());
    assert_eq!(std::fs::read(dir.path().join("shape_verdicts.json")).unwrap(), verdicts);
}

#[test]
fn train_then_score_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.json");
    std::fs::write(
        &cfg,
        r#"{"task": "index", "n": 9, "m_sym": 4, "k_int": 8, "epochs": 2, "train_size": 128, "val_size": 64, "d_model": 8}"#,
    )
    .unwrap();
    let o = posym(&["train", "--config", cfg.to_str().unwrap(), "--log-qk"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["history.csv", "checkpoint.json", "qk_trajectory.csv", "accuracy.svg"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let score_cfg = dir.path().join("score.json");
    std::fs::write(
        &score_cfg,
        r#"{"n": 9, "blocks": 4, "swap_blocks": 4, "inputs": 4, "m_sym": 4, "k_int": 8}"#,
    )
    .unwrap();
    let ck = dir.path().join("checkpoint.json");
    let scored = dir.path().join("scored");
    let o = posym(
        &[
            "score",
            "--config",
            score_cfg.to_str().unwrap(),
            "--checkpoint",
            ck.to_str().unwrap(),
        ],
        &scored,
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(scored.join("scores.csv")).unwrap();
    // Header, provenance, aggregate and one plane row.
    assert_eq!(csv.lines().count(), 4, "{csv}");
}
