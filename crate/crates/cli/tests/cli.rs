//! End-to-end tests driving the built binary.

use std::path::Path;
use std::process::{Command, Output};

fn fedlab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedlab"))
        .args(args)
        .current_dir(dir)
        .env_remove("FEDLAB_OUT")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, contents: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path.display().to_string()
}

const QUADRATIC_CONFIG: &str = r#"{
    "algorithm": "fedda_sgdm",
    "data": {"kind": "quadratic", "clients": 2, "dim": 2, "heterogeneity": 1.0},
    "rounds": 5,
    "local_iters": 3,
    "eta": 0.05,
    "seed": 1
}"#;

/// Strict CSV shape: header plus uniform column counts.
fn assert_csv_well_formed(path: &Path, columns: usize) -> usize {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().expect("header row");
    assert_eq!(header.split(',').count(), columns, "header of {path:?}");
    let mut rows = 0;
    for line in lines {
        assert_eq!(line.split(',').count(), columns, "ragged row: {line}");
        rows += 1;
    }
    rows
}

#[test]
fn missing_config_exits_1_and_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedlab(&["run", "nowhere/missing.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing.json"), "stderr: {stderr}");
}

#[test]
fn unknown_config_key_exits_1_and_names_key() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "bad.json",
        r#"{
            "algorithm": "fed_avg",
            "data": {"kind": "quadratic", "clients": 2, "dim": 2, "heterogeneity": 0.5},
            "rounds": 2,
            "learning_rate": 0.3
        }"#,
    );
    let out = fedlab(&["run", &config], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("learning_rate"), "stderr: {stderr}");
}

#[test]
fn run_writes_metrics_checkpoint_and_echo() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "quad.json", QUADRATIC_CONFIG);
    let out = fedlab(&["run", &config, "--out", "results"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{out:?}");

    let results = dir.path().join("results");
    let rows = assert_csv_well_formed(&results.join("metrics.csv"), 6);
    assert_eq!(rows, 5, "one data row per round");
    assert!(results.join("checkpoint.json").exists());
    assert!(results.join("resolved_config.json").exists());

    // Echo round-trip: rerunning from the resolved config reproduces
    // the metrics byte for byte.
    let echo = results.join("resolved_config.json").display().to_string();
    let out = fedlab(&["run", &echo, "--out", "results_echo"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let a = std::fs::read(results.join("metrics.csv")).unwrap();
    let b = std::fs::read(dir.path().join("results_echo/metrics.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn seed_override_changes_output_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "quad.json", QUADRATIC_CONFIG);
    for (out_dir, args) in [
        ("base", vec!["run", &config, "--out", "base"]),
        ("s9a", vec!["run", &config, "--out", "s9a", "--seed", "9"]),
        ("s9b", vec!["run", &config, "--out", "s9b", "--seed", "9"]),
    ] {
        let out = fedlab(&args, dir.path());
        assert_eq!(out.status.code(), Some(0), "{out_dir}: {out:?}");
    }
    let base = std::fs::read(dir.path().join("base/metrics.csv")).unwrap();
    let a = std::fs::read(dir.path().join("s9a/metrics.csv")).unwrap();
    let b = std::fs::read(dir.path().join("s9b/metrics.csv")).unwrap();
    assert_ne!(base, a, "override changes the run");
    assert_eq!(a, b, "override is reproducible");
}

#[test]
fn out_env_variable_is_used_unless_flag_given() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "quad.json", QUADRATIC_CONFIG);
    let out = Command::new(env!("CARGO_BIN_EXE_fedlab"))
        .args(["run", &config])
        .current_dir(dir.path())
        .env("FEDLAB_OUT", "from_env")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("from_env/metrics.csv").exists());
}

#[test]
fn deviation_pinned_and_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    let pinned = write_config(
        dir.path(),
        "pinned.json",
        r#"{
            "algorithm": "fedda_sgdm",
            "data": {"kind": "mirrored_quadratic", "heterogeneity": 1.0},
            "rounds": 1,
            "eta": 0.01,
            "beta1": 0.9,
            "init": [0.5, 0.5],
            "deviation": {"steps": 500}
        }"#,
    );
    let out = fedlab(&["deviation", &pinned, "--out", "dev"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let rows = assert_csv_well_formed(&dir.path().join("dev/deviation_trace.csv"), 5);
    assert_eq!(rows, 501, "t = 0..=500");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("dev/fit_summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["note"], "ok");
    assert_eq!(summary["summary"]["degenerate"], false);
    assert!(summary["summary"]["lambda_plus"].as_f64().unwrap() > 0.0);
    let p = summary["summary"]["fedda_momentum"]["fit"]["power_exponent"]
        .as_f64()
        .unwrap();
    assert!(p <= 2.5, "power exponent {p}");

    let degenerate = write_config(
        dir.path(),
        "degenerate.json",
        r#"{
            "algorithm": "fedda_sgdm",
            "data": {"kind": "mirrored_quadratic", "heterogeneity": 0.0},
            "rounds": 1,
            "eta": 0.01,
            "deviation": {"steps": 50}
        }"#,
    );
    let out = fedlab(&["deviation", &degenerate, "--out", "dev0"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("dev0/fit_summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["note"], "degenerate: zero deviation");

    let malformed = write_config(dir.path(), "broken.json", "{ not json");
    let out = fedlab(&["deviation", &malformed, "--out", "devx"], dir.path());
    assert_eq!(out.status.code(), Some(1));

    // Classification data is rejected up front.
    let wrong_kind = write_config(
        dir.path(),
        "class.json",
        r#"{
            "algorithm": "fedda_sgdm",
            "data": {
                "kind": "classification",
                "samples": 40, "features": 3, "classes": 2, "clients": 2,
                "partition": {"scheme": "iid"}
            },
            "rounds": 1
        }"#,
    );
    let out = fedlab(&["deviation", &wrong_kind, "--out", "devy"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn failed_run_exits_2_and_keeps_partial_metrics() {
    let dir = tempfile::tempdir().unwrap();
    // A wildly unstable learning rate overflows after a few rounds; the
    // rounds completed before the failure must remain on disk.
    let config = write_config(
        dir.path(),
        "diverge.json",
        r#"{
            "algorithm": "fed_avg",
            "data": {"kind": "quadratic", "clients": 2, "dim": 2, "heterogeneity": 1.0},
            "rounds": 50,
            "local_iters": 3,
            "eta": 1e30,
            "seed": 1
        }"#,
    );
    let out = fedlab(&["run", &config, "--out", "partial"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    let rows = assert_csv_well_formed(&dir.path().join("partial/metrics.csv"), 6);
    assert!(rows >= 1, "partial rows flushed before the failure");
    assert!(rows < 50, "the run did fail early");
}

#[test]
fn check_passes_fails_when_perturbed_and_emits_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedlab(&["check"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("fedavg_vs_centralized_gd"));
    assert!(stdout.contains("pass"));

    let out = fedlab(&["check", "--perturb-eta", "1.5"], dir.path());
    assert_eq!(out.status.code(), Some(3), "perturbed eta must fail");

    let out = fedlab(&["check", "--json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("valid json report");
    let cases = report["equivalence"].as_array().unwrap();
    assert!(cases.len() >= 5, "one entry per reduction");
    assert!(report["gradients"].as_array().unwrap().len() == 3);
    for case in cases {
        assert_eq!(case["passed"], true);
    }
}

#[test]
fn sweep_grid_cells_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "quad.json", QUADRATIC_CONFIG);
    let out = fedlab(
        &[
            "sweep", &config,
            "--grid", "eta=0.01,0.1;alpha=1,2",
            "--out", "sweep",
            "--jobs", "4",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    for i in 0..4 {
        let cell = dir.path().join(format!("sweep/cell_{i:03}"));
        assert_csv_well_formed(&cell.join("metrics.csv"), 6);
        assert!(cell.join("checkpoint.json").exists());
    }
    let summary = dir.path().join("sweep/summary.csv");
    let rows = assert_csv_well_formed(&summary, 4);
    assert_eq!(rows, 4, "one summary row per cell");
    // Sorted ascending by final loss.
    let text = std::fs::read_to_string(&summary).unwrap();
    let losses: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert!(losses.windows(2).all(|w| w[0] <= w[1]), "{losses:?}");

    let out = fedlab(&["sweep", &config, "--grid", "", "--out", "s2"], dir.path());
    assert_eq!(out.status.code(), Some(1), "empty grid is a config error");

    let out = fedlab(
        &["sweep", &config, "--grid", "warp=1,2", "--out", "s3"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warp"));
}
