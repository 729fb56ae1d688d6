//! End-to-end CLI checks: exit codes, output files, and determinism of the
//! emitted artifacts.

use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tenantsel"))
}

fn write_syn_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("syn.conf");
    fs::write(
        &path,
        "sigma_m = 0.5\nalpha = 1.0\nsigma_b = 0.1\nmu_b_list = 0.75, 0.25\n\
         n_users = 12\nn_models = 6\nsigma_w = 0.0\nseed = 7\n",
    )
    .unwrap();
    path
}

#[test]
fn synthetic_experiment_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_syn_config(dir.path());
    let out = dir.path().join("results");
    let status = bin()
        .args([
            "--workload",
            "syn",
            "--syn-config",
            conf.to_str().unwrap(),
            "--policy",
            "rr",
            "--policy",
            "hybrid",
            "--repeats",
            "3",
            "--budget-rounds",
            "10",
            "--train-frac",
            "0.75",
            "--test-tenants",
            "3",
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with(
        "run_id,round,cum_cost,policy,tenant,arm,cost,observation,avg_accuracy_loss,cum_regret,easeml_regret\n"
    ));
    // repeats x policies x rounds data rows.
    assert_eq!(trace.lines().count(), 1 + 3 * 2 * 10);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["policies"].as_array().unwrap().len(), 2);
    assert_eq!(summary["seeds"].as_array().unwrap().len(), 3);
}

#[test]
fn csv_workload_roundtrip_through_cli() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("q.csv");
    let c = dir.path().join("c.csv");
    let mut quality = String::from("user,m0,m1,m2,m3\n");
    let mut cost = String::from("user,m0,m1,m2,m3\n");
    for i in 0..8 {
        let row: Vec<String> = (0..4)
            .map(|j| format!("{}", 0.3 + 0.08 * ((i * 4 + j) % 9) as f64))
            .collect();
        quality.push_str(&format!("u{i},{}\n", row.join(",")));
        cost.push_str(&format!("u{i},0.5,1.0,1.5,2.0\n"));
    }
    fs::write(&q, quality).unwrap();
    fs::write(&c, cost).unwrap();
    let out = dir.path().join("results");
    let status = bin()
        .args([
            "--workload",
            "csv",
            "--quality",
            q.to_str().unwrap(),
            "--cost",
            c.to_str().unwrap(),
            "--policy",
            "greedy",
            "--repeats",
            "2",
            "--budget-rounds",
            "8",
            "--train-frac",
            "0.75",
            "--test-tenants",
            "2",
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("summary.json").exists());
}

#[test]
fn input_errors_exit_with_code_one() {
    // Missing the required --syn-config for a synthetic workload.
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["--workload", "syn", "--policy", "rr"])
        .current_dir(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));

    // Unreadable quality file.
    let status = bin()
        .args([
            "--workload",
            "csv",
            "--quality",
            "/nonexistent/q.csv",
            "--cost",
            "/nonexistent/c.csv",
            "--policy",
            "rr",
        ])
        .current_dir(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));

    // Bad flag value: clap parse failures are input errors too.
    let status = bin()
        .args(["--workload", "nope", "--policy", "rr"])
        .current_dir(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_syn_config(dir.path());
    let run = |out: &Path| {
        let status = bin()
            .args([
                "--workload",
                "syn",
                "--syn-config",
                conf.to_str().unwrap(),
                "--policy",
                "hybrid",
                "--repeats",
                "2",
                "--budget-rounds",
                "8",
                "--train-frac",
                "0.75",
                "--test-tenants",
                "3",
                "--noise-std",
                "0.05",
                "--out",
                out.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
    };
    let o1 = dir.path().join("a");
    let o2 = dir.path().join("b");
    run(&o1);
    run(&o2);
    assert_eq!(
        fs::read(o1.join("trace.csv")).unwrap(),
        fs::read(o2.join("trace.csv")).unwrap()
    );
    assert_eq!(
        fs::read(o1.join("summary.json")).unwrap(),
        fs::read(o2.join("summary.json")).unwrap()
    );
}
