use std::path::Path;
use std::process::{Command, Output};

fn sentinel(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sentinel"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn sentinel")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const SMALL_EXPERIMENT: &str = r#"
replications = 6
budgets = [40.0, 80.0, 160.0]

[source.synthetic]
kind = "binary"
n = 200
score_alpha = 4.0
score_beta = 1.0
"#;

#[test]
fn design_simulate_estimate_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = sentinel(d, &["design", "--budget", "100", "--out", "run"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = sentinel(
        d,
        &["simulate", "--design", "run/design.json", "--out", "run"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = sentinel(
        d,
        &[
            "estimate",
            "--outcomes",
            "run/outcomes.csv",
            "--design",
            "run/design.json",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let ci = report["ci"].as_array().unwrap();
    let (lo, hi) = (ci[0].as_f64().unwrap(), ci[1].as_f64().unwrap());
    let point = report["point"].as_f64().unwrap();
    assert!(lo <= point && point <= hi);
    assert_eq!(report["n"].as_u64(), Some(1000));
    assert!(report["realized_cost"].as_f64().unwrap() > 0.0);
}

#[test]
fn baseline_pipeline_uses_matching_estimator() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(
        code(&sentinel(
            d,
            &["design", "--budget", "300", "--method", "active", "--out", "a"]
        )),
        0
    );
    assert_eq!(
        code(&sentinel(
            d,
            &["simulate", "--design", "a/design.json", "--out", "a"]
        )),
        0
    );
    let out = sentinel(
        d,
        &[
            "estimate",
            "--outcomes",
            "a/outcomes.csv",
            "--design",
            "a/design.json",
            "--method",
            "active",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["method"], "active");
}

#[test]
fn design_reads_prediction_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let mut csv = String::from("id,prediction,y_true\n");
    for i in 0..50 {
        csv.push_str(&format!("{i},{},{}\n", 0.5 + 0.009 * i as f64, i % 2));
    }
    std::fs::write(d.join("preds.csv"), csv).unwrap();
    let out = sentinel(d, &["design", "--data", "preds.csv", "--budget", "10"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let design: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(design["pi"].as_array().unwrap().len(), 50);
}

#[test]
fn invalid_inputs_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("bad.toml"), "replications = 0\n").unwrap();
    assert_eq!(
        code(&sentinel(
            d,
            &["--config", "bad.toml", "design", "--budget", "10"]
        )),
        2
    );
    std::fs::write(d.join("typo.toml"), "replicatoins = 3\n").unwrap();
    assert_eq!(
        code(&sentinel(d, &["--config", "typo.toml", "experiment"])),
        2
    );
    assert_eq!(code(&sentinel(d, &["design", "--budget=-1"])), 2);
    assert_eq!(
        code(&sentinel(
            d,
            &["design", "--budget", "10", "--method", "bogus"]
        )),
        2
    );
    assert_eq!(
        code(&sentinel(
            d,
            &[
                "estimate",
                "--outcomes",
                "missing.csv",
                "--design",
                "missing.json"
            ]
        )),
        2
    );
}

#[test]
fn experiment_writes_reproducible_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("small.toml"), SMALL_EXPERIMENT).unwrap();
    for run in ["r1", "r2"] {
        let out = sentinel(d, &["--config", "small.toml", "--out", run, "experiment"]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        for file in [
            "report.json",
            "widths.csv",
            "coverage.csv",
            "budget_saved.csv",
        ] {
            assert!(d.join(run).join(file).exists(), "{run}/{file} missing");
        }
    }
    for file in [
        "report.json",
        "widths.csv",
        "coverage.csv",
        "budget_saved.csv",
    ] {
        let read = |run: &str| std::fs::read_to_string(d.join(run).join(file)).unwrap();
        assert_eq!(read("r1"), read("r2"), "{file} differs");
    }
    let out = sentinel(
        d,
        &[
            "--config",
            "small.toml",
            "--out",
            "r3",
            "--seed",
            "99",
            "experiment",
        ],
    );
    assert_eq!(code(&out), 0);
    assert_ne!(
        std::fs::read(d.join("r1/report.json")).unwrap(),
        std::fs::read(d.join("r3/report.json")).unwrap()
    );
}

#[test]
fn verification_failure_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    // Two coverage rounds can only give coverage 0, 0.5 or 1.
    let cfg = "unbiased_rounds = 20\nunbiased_n = 100\ncoverage_rounds = 2\ncoverage_n = 200\n\
               m_rounds = 2\nm_n = 200\nperturbations = 5\nfidelity_n = 2000\n";
    std::fs::write(d.join("tiny.toml"), cfg).unwrap();
    let out = sentinel(d, &["--config", "tiny.toml", "--out", "v", "verify-theory"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.lines().any(|l| l.starts_with("FAIL coverage")),
        "{stdout}"
    );
    assert!(
        stdout.lines().any(|l| l.starts_with("PASS sentinel_foc")),
        "{stdout}"
    );
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("v/verification.json")).unwrap()).unwrap();
    assert_eq!(report["all_passed"], false);
}

#[test]
fn help_lists_every_subcommand() {
    let tmp = tempfile::tempdir().unwrap();
    let out = sentinel(tmp.path(), &["--help"]);
    assert_eq!(code(&out), 0);
    let help = String::from_utf8_lossy(&out.stdout);
    for sub in [
        "design",
        "simulate",
        "estimate",
        "experiment",
        "verify-theory",
    ] {
        assert!(help.contains(sub), "{sub} missing from help");
    }
}
