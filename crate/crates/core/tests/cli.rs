use std::path::{Path, PathBuf};
use std::process::Command;

use hilo::bench::BenchReport;
use hilo::container::save_container;
use hilo::vit::{init_weights, weights_to_container};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hilo-bench"))
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

const SMALL: &str = r#"{
    "id": "small",
    "seed": 4,
    "arch": {"layers": 3, "channels": 8, "heads": 2, "mlp_ratio": 2, "token_rows": 8, "token_cols": 8},
    "pipeline": {"alpha": 1, "beta": 1, "gamma": 1,
                 "clustering": {"target_h": 4, "target_w": 4, "lambda_h": 3, "lambda_w": 3, "kappa": 2, "tau": 1.0},
                 "reconstruction": {"k": 4, "tau": 1.0}},
    "timing": {"reps": 1, "warmup": 0}
}"#;

#[test]
fn identity_config_runs_with_unit_fidelity() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--config"])
        .arg(config_path("identity.json"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = BenchReport::from_json(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let row = &report.rows[0];
    assert!((row.fidelity_mean_final - 1.0).abs() <= 1e-5);
    assert!((row.fidelity_mean_alpha_beta - 1.0).abs() <= 1e-5);
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.starts_with("config_id,"));
    // stdout carries the same JSON as the file
    assert_eq!(BenchReport::from_json(&String::from_utf8(out.stdout).unwrap()).unwrap(), report);
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\"seed\": 1,").unwrap();
    let status = bin().args(["run", "--config"]).arg(&path).status().unwrap();
    assert_eq!(status.code(), Some(2));
    std::fs::write(&path, SMALL.replace("\"gamma\": 1", "\"gamma\": 5")).unwrap();
    let status = bin().args(["flops", "--config"]).arg(&path).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn non_finite_weights_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut weights = init_weights(1, 3, 8, 2, 2).unwrap();
    weights[1].wv[3] = f32::NAN;
    let wpath = dir.path().join("w.bin");
    save_container(&wpath, &weights_to_container(&weights).unwrap()).unwrap();
    let cfg = SMALL.replacen('{', &format!("{{\"weights_path\": {:?},", wpath.to_str().unwrap()), 1);
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, cfg).unwrap();
    let status = bin().args(["run", "--config"]).arg(&path).status().unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn sweep_rows_follow_value_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, SMALL).unwrap();
    let out = bin()
        .args(["sweep", "--axis", "kappa", "--values", "3,0,1", "--seed", "9", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = BenchReport::from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    let ids: Vec<&str> = report.rows.iter().map(|r| r.config_id.as_str()).collect();
    assert_eq!(ids, ["kappa=3", "kappa=0", "kappa=1"]);
    assert!(report.rows[0].flops_total > report.rows[2].flops_total);
    assert!(report.rows[2].flops_total > report.rows[1].flops_total);
    let bad = bin().args(["sweep", "--axis", "size", "--values", "1", "--config"]).arg(&path).status().unwrap();
    assert_eq!(bad.code(), Some(2));
}

#[test]
fn flops_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["flops", "--config"])
        .arg(config_path("vit_large.json"))
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let report: hilo::flops::FlopsReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("flops.json")).unwrap()).unwrap();
    assert!(report.ratio > 0.6 && report.ratio < 0.72);
    let csv = std::fs::read_to_string(dir.path().join("flops.csv")).unwrap();
    assert_eq!(csv.lines().count(), report.rows.len() + 1);
}

#[test]
fn threads_flag_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, SMALL).unwrap();
    let run = |threads: &str| {
        let out = bin().args(["--threads", threads, "run", "--config"]).arg(&path).output().unwrap();
        assert!(out.status.success());
        BenchReport::from_json(&String::from_utf8(out.stdout).unwrap()).unwrap().rows.remove(0)
    };
    let (a, b) = (run("1"), run("3"));
    assert_eq!(a.fidelity_mean_final, b.fidelity_mean_final);
    assert_eq!(a.fidelity_min_alpha_beta, b.fidelity_min_alpha_beta);
}
