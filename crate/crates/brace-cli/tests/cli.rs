//! Black-box CLI contract tests: file outputs, exit codes, reproducibility.

use std::path::Path;
use std::process::Command;

fn brace() -> Command {
    Command::new(env!("CARGO_BIN_EXE_brace"))
}

fn simulate_into(dir: &Path, seed: u64) {
    let status = brace()
        .args([
            "simulate", "--n", "80", "--p", "40", "--case", "dep1", "--rho", "0.5", "--snr",
            "1.5", "--seed",
        ])
        .arg(seed.to_string())
        .arg("--out")
        .arg(dir)
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn simulate_writes_dataset_files() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_into(tmp.path(), 5);
    for f in [
        "x_train.csv",
        "y_train.csv",
        "x_test.csv",
        "y_test.csv",
        "truth.json",
        "manifest.json",
    ] {
        assert!(tmp.path().join(f).exists(), "missing {f}");
    }
}

#[test]
fn simulate_config_file_merges_with_flag_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("sim.json");
    std::fs::write(
        &cfg,
        r#"{"n": 60, "p": 40, "case": "dep1", "rho": 0.5, "snr": 2.0, "seed": 5}"#,
    )
    .unwrap();
    // The flag overrides the file's n; everything else comes from the file.
    let out = tmp.path().join("sim");
    assert!(brace()
        .args(["simulate", "--n", "50"])
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["config"]["n"], 50);
    assert_eq!(manifest["config"]["p"], 40);
    assert_eq!(manifest["seed"], 5);
}

#[test]
fn simulate_requires_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let status = brace()
        .args(["simulate", "--n", "80", "--p", "40", "--case", "dep1"])
        .arg("--out")
        .arg(tmp.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn simulate_rejects_small_p() {
    let tmp = tempfile::tempdir().unwrap();
    let status = brace()
        .args([
            "simulate", "--n", "80", "--p", "30", "--case", "dep1", "--seed", "1",
        ])
        .arg("--out")
        .arg(tmp.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn fit_writes_trace_and_rejects_bad_burnin() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_into(&tmp.path().join("sim"), 6);
    let run = tmp.path().join("run");
    let status = brace()
        .args(["fit", "--iters", "60", "--burnin", "20", "--seed", "3"])
        .arg("--x")
        .arg(tmp.path().join("sim/x_train.csv"))
        .arg("--y")
        .arg(tmp.path().join("sim/y_train.csv"))
        .arg("--out")
        .arg(&run)
        .status()
        .unwrap();
    assert!(status.success());
    for f in ["beta.csv", "scalars.csv", "z.csv", "manifest.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }

    let status = brace()
        .args(["fit", "--iters", "50", "--burnin", "60", "--seed", "3"])
        .arg("--x")
        .arg(tmp.path().join("sim/x_train.csv"))
        .arg("--y")
        .arg(tmp.path().join("sim/y_train.csv"))
        .arg("--out")
        .arg(tmp.path().join("run2"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn fit_missing_input_is_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let status = brace()
        .args(["fit", "--iters", "10", "--burnin", "2", "--seed", "3"])
        .arg("--x")
        .arg(tmp.path().join("nope.csv"))
        .arg("--y")
        .arg(tmp.path().join("nope_y.csv"))
        .arg("--out")
        .arg(tmp.path().join("run"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn fit_accepts_count_input() {
    let tmp = tempfile::tempdir().unwrap();
    // Small raw count table with zeros plus an aligned response.
    std::fs::write(
        tmp.path().join("counts.csv"),
        "taxa_a,taxa_b,taxa_c\n0,5,10\n3,0,7\n8,2,0\n1,1,1\n4,6,2\n2,9,3\n",
    )
    .unwrap();
    std::fs::write(
        tmp.path().join("y.csv"),
        "response\n0.5\n-0.2\n1.1\n0.0\n0.3\n-0.8\n",
    )
    .unwrap();
    let run = tmp.path().join("run");
    let status = brace()
        .args([
            "fit",
            "--iters",
            "30",
            "--burnin",
            "10",
            "--seed",
            "4",
            "--pseudocount",
            "0.5",
        ])
        .arg("--counts")
        .arg(tmp.path().join("counts.csv"))
        .arg("--y")
        .arg(tmp.path().join("y.csv"))
        .arg("--out")
        .arg(&run)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(run.join("beta.csv").exists());
}

#[test]
fn summarize_level_widens_selection_monotonically() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_into(&tmp.path().join("sim"), 7);
    let run = tmp.path().join("run");
    assert!(brace()
        .args(["fit", "--iters", "400", "--burnin", "100", "--seed", "9"])
        .arg("--x")
        .arg(tmp.path().join("sim/x_train.csv"))
        .arg("--y")
        .arg(tmp.path().join("sim/y_train.csv"))
        .arg("--out")
        .arg(&run)
        .status()
        .unwrap()
        .success());

    let selected = |level: &str, out: &Path| -> Vec<bool> {
        assert!(brace()
            .args(["summarize", "--level", level, "--seed", "0"])
            .arg("--trace")
            .arg(&run)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap()
            .success());
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap())
                .unwrap();
        summary["selected"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_bool().unwrap())
            .collect()
    };
    let wide = selected("0.5", &tmp.path().join("s50"));
    let narrow = selected("0.95", &tmp.path().join("s95"));
    for (w, n) in wide.iter().zip(narrow.iter()) {
        assert!(*w || !*n, "0.95-selected feature missing at level 0.5");
    }
    // Labels are 0-based with 0 reserved for the spike.
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("s95/summary.json")).unwrap(),
    )
    .unwrap();
    let partition: Vec<usize> = summary["point_partition"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap() as usize)
        .collect();
    let selected95 = selected("0.95", &tmp.path().join("s95b"));
    for (label, sel) in partition.iter().zip(selected95.iter()) {
        assert_eq!(*label == 0, !*sel);
    }
}

#[test]
fn fit_numerical_failure_exits_3_with_state_dump() {
    let tmp = tempfile::tempdir().unwrap();
    // A NaN in the design propagates into the collapsed marginal, which
    // reports a numerical error carrying a state snapshot.
    std::fs::write(
        tmp.path().join("x.csv"),
        "a,b\n1.0,2.0\nNaN,0.5\n-1.0,1.5\n0.3,-0.7\n",
    )
    .unwrap();
    std::fs::write(tmp.path().join("y.csv"), "response\n1.0\n-1.0\n0.5\n0.2\n").unwrap();
    let run = tmp.path().join("run");
    let status = brace()
        .args(["fit", "--iters", "20", "--burnin", "5", "--seed", "8"])
        .arg("--x")
        .arg(tmp.path().join("x.csv"))
        .arg("--y")
        .arg(tmp.path().join("y.csv"))
        .arg("--out")
        .arg(&run)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
    assert!(run.join("state_dump.json").exists());
}

#[test]
fn summarize_empty_trace_is_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    std::fs::create_dir_all(&run).unwrap();
    std::fs::write(run.join("beta.csv"), "f1,f2\n").unwrap();
    std::fs::write(run.join("scalars.csv"), "sigma2,gamma2,alpha,k,log_marginal\n").unwrap();
    std::fs::write(run.join("z.csv"), "f1,f2\n").unwrap();
    let status = brace()
        .args(["summarize"])
        .arg("--trace")
        .arg(&run)
        .arg("--out")
        .arg(tmp.path().join("sum"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn benchmark_grid_emits_replicate_and_aggregate_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let grid = tmp.path().join("grid.json");
    std::fs::write(
        &grid,
        r#"{
            "seed": 99,
            "replicates": 3,
            "chain": {"n_iter": 120, "burn_in": 40},
            "configs": [
                {"n": 60, "p": 40, "case": "dep1", "rho": 0.5, "snr": 2.0},
                {"n": 60, "p": 40, "case": "dep2", "snr": 2.0}
            ]
        }"#,
    )
    .unwrap();
    let out = tmp.path().join("bench");
    assert!(brace()
        .args(["benchmark", "--jobs", "2"])
        .arg("--grid")
        .arg(&grid)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let replicates = std::fs::read_to_string(out.join("replicates.csv")).unwrap();
    assert_eq!(replicates.lines().count(), 1 + 6, "6 replicate rows expected");
    let aggregate = std::fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert_eq!(aggregate.lines().count(), 1 + 2, "2 aggregate rows expected");
    // Cells follow the mean (sd) layout.
    assert!(aggregate.contains('('), "aggregate cells carry mean (sd)");

    // Rerunning the same grid reproduces the aggregate bitwise.
    let out2 = tmp.path().join("bench2");
    assert!(brace()
        .args(["benchmark", "--jobs", "3"])
        .arg("--grid")
        .arg(&grid)
        .arg("--out")
        .arg(&out2)
        .status()
        .unwrap()
        .success());
    assert_eq!(
        std::fs::read(out.join("aggregate.csv")).unwrap(),
        std::fs::read(out2.join("aggregate.csv")).unwrap()
    );
    // Replicate rows agree on everything except wall-clock timings.
    let strip_timing = |path: &Path| -> Vec<String> {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| {
                let fields: Vec<&str> = l.split(',').collect();
                fields[..fields.len() - 2].join(",")
            })
            .collect()
    };
    assert_eq!(
        strip_timing(&out.join("replicates.csv")),
        strip_timing(&out2.join("replicates.csv"))
    );
}
