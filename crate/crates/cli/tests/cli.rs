//! End-to-end checks of the riskyval binary: artifact layout, exit codes,
//! override precedence, and worker-count independence of the report bytes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const HEADER: &str =
    "label,risk_free,risky_ctm,risky_dtm,cva_ctm,cva_dtm,relative_difference,standard_error";

const PRICE_CONFIG: &str = r#"
[run]
seed = 42
side = "unilateral"

[discount]
rate = 0.03

[credit.b]
hazard = 0.006

[recovery]
phi_b = 0.7

[[product]]
kind = "schedule"
label = "zcb-1y"
times = [1.0]
amounts = [1.0]
"#;

const CVA_CONFIG: &str = r#"
[run]
seed = 11
paths = 400
side = "unilateral"

[discount]
rate = 0.03

[credit.b]
hazard = 0.02

[recovery]
phi_b = 0.4

[grid]
horizon = 2.0
step = 0.25

[[process]]
role = "rate"
kind = "cir"
initial = 0.03
speed = 0.6
level = 0.03
volatility = 0.08

[[product]]
kind = "swap"
label = "payer"
notional = 100.0
fixed_rate = 0.03
pay_fixed = true
periods = 4
span = 0.5
"#;

const WRONGWAY_CONFIG: &str = r#"
[run]
seed = 5
paths = 400
side = "unilateral"

[discount]
rate = 0.03

[credit.b]
hazard = 0.02

[recovery]
phi_b = 0.4

[grid]
horizon = 1.0
step = 0.25

[[process]]
role = "equity"
kind = "gbm"
initial = 100.0
volatility = 0.3

[[process]]
role = "hazard-b"
kind = "cir"
initial = 0.02
speed = 0.5
level = 0.02
volatility = 0.05

[[product]]
kind = "equity-swap"
label = "trs"
notional = 1.0
fixed_rate = 0.02
pay_equity = true
periods = 2
span = 0.5

[sweep]
correlations = [0.0, -0.5]
"#;

fn riskyval(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_riskyval"));
    // keep the ambient environment from leaking overrides into tests
    cmd.env_remove("RISKYVAL_PATHS").env_remove("RISKYVAL_SEED");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.args(args);
    cmd.output().expect("spawn riskyval")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn read_report(dir: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(dir.join("report.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(HEADER));
    lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn price_writes_report_and_meta() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), PRICE_CONFIG);
    let out_dir = dir.path().join("out");
    let out = riskyval(
        &[
            "price",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "{}", stderr_of(&out));

    let rows = read_report(&out_dir);
    assert_eq!(rows.len(), 1);
    let row = &rows[0];
    assert_eq!(row[0], "zcb-1y");
    assert_eq!(row[1], format!("{:.6}", (-0.03f64).exp()));
    assert!(row[2].is_empty(), "ctm column stays empty: {row:?}");
    assert!(!row[3].is_empty(), "dtm value filled: {row:?}");
    assert!(!row[5].is_empty(), "dtm cva filled: {row:?}");
    assert!(row[7].is_empty(), "no standard error on a lattice row");

    let meta = std::fs::read_to_string(out_dir.join("meta.txt")).unwrap();
    assert!(meta.contains("command=price\n"), "{meta}");
    assert!(meta.contains("seed=42\n"), "{meta}");
    assert!(meta.contains("paths=0\n"), "{meta}");
    assert!(meta.contains("config_sha256="), "{meta}");
    assert!(meta.contains("runtime_ms="), "{meta}");
}

#[test]
fn timing_table_fills_both_columns() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), PRICE_CONFIG);
    let out_dir = dir.path().join("out");
    let out = riskyval(
        &[
            "table-ctm-dtm",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "{}", stderr_of(&out));

    let rows = read_report(&out_dir);
    assert_eq!(rows.len(), 1);
    let row = &rows[0];
    for i in 1..=6 {
        assert!(!row[i].is_empty(), "column {i} filled: {row:?}");
    }
    assert!(row[7].is_empty(), "no standard error on a lattice row");
    // one-period settlement keeps less value than instantaneous default
    let (ctm, dtm): (f64, f64) = (row[4].parse().unwrap(), row[5].parse().unwrap());
    assert!(dtm < ctm, "dtm charge below ctm on a receivable: {row:?}");
}

#[test]
fn cva_reports_one_portfolio_row() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), CVA_CONFIG);
    let out_dir = dir.path().join("out");
    let out = riskyval(
        &[
            "cva",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "{}", stderr_of(&out));

    let rows = read_report(&out_dir);
    assert_eq!(rows.len(), 1);
    let row = &rows[0];
    assert_eq!(row[0], "portfolio");
    assert!(!row[1].is_empty() && !row[3].is_empty() && !row[5].is_empty());
    assert!(row[2].is_empty() && row[4].is_empty() && row[6].is_empty());
    let se: f64 = row[7].parse().unwrap();
    assert!(se > 0.0, "simulation rows carry a standard error: {row:?}");

    let meta = std::fs::read_to_string(out_dir.join("meta.txt")).unwrap();
    assert!(meta.contains("paths=400\n"), "{meta}");
}

#[test]
fn collateral_table_emits_one_row_per_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let config_text = format!(
        "{CVA_CONFIG}\n[margin]\nthreshold_b = 5.0\nthreshold_a = inf\nperiod = 0.05\n\n\
         [sweep]\nthresholds_b = [inf, 2.0, 0.0]\n"
    );
    let config = write_config(dir.path(), &config_text);
    let out_dir = dir.path().join("out");
    let out = riskyval(
        &[
            "table-collateral",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "{}", stderr_of(&out));

    let rows = read_report(&out_dir);
    let labels: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(labels, ["inf", "2.00000", "0"]);
    // every row reports the same clean portfolio value
    assert!(rows.iter().all(|r| r[1] == rows[0][1]), "{rows:?}");
}

#[test]
fn wrongway_table_emits_one_row_per_correlation() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), WRONGWAY_CONFIG);
    let out_dir = dir.path().join("out");
    let out = riskyval(
        &[
            "table-wrongway",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "{}", stderr_of(&out));

    let rows = read_report(&out_dir);
    let labels: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(labels, ["0", "-0.500000"]);
}

#[test]
fn unknown_config_keys_exit_2_with_a_location() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &PRICE_CONFIG.replace("[discount]", "[discount]\nspread = 1.0"),
    );
    let out = riskyval(
        &[
            "price",
            "--config",
            config.to_str().unwrap(),
            "--out",
            dir.path().join("out").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("spread"), "{err}");
    assert!(err.contains("line"), "{err}");
}

#[test]
fn missing_grid_for_simulation_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), PRICE_CONFIG);
    let out = riskyval(
        &[
            "cva",
            "--config",
            config.to_str().unwrap(),
            "--out",
            dir.path().join("out").to_str().unwrap(),
            "--paths",
            "100",
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("process") || err.contains("grid"), "{err}");
}

#[test]
fn unreadable_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = riskyval(
        &[
            "price",
            "--config",
            dir.path().join("absent.toml").to_str().unwrap(),
            "--out",
            dir.path().join("out").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr_of(&out).contains("cannot read"),
        "{}",
        stderr_of(&out)
    );
}

#[test]
fn infeasible_default_correlation_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let config_text = PRICE_CONFIG
        .replace("side = \"unilateral\"", "side = \"bilateral\"\nrho = 1.0")
        .replace("hazard = 0.006", "hazard = 0.5")
        .replace("[recovery]", "[credit.a]\nhazard = 0.001\n\n[recovery]")
        .replace("phi_b = 0.7", "phi_b = 0.7\nphi_a = 0.4");
    let config = write_config(dir.path(), &config_text);
    let out = riskyval(
        &[
            "price",
            "--config",
            config.to_str().unwrap(),
            "--out",
            dir.path().join("out").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_of(&out).contains("lattice"), "{}", stderr_of(&out));
}

#[test]
fn flag_beats_environment_beats_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), CVA_CONFIG);

    let env_dir = dir.path().join("env");
    let out = riskyval(
        &[
            "cva",
            "--config",
            config.to_str().unwrap(),
            "--out",
            env_dir.to_str().unwrap(),
        ],
        &[("RISKYVAL_SEED", "7"), ("RISKYVAL_PATHS", "200")],
    );
    assert!(out.status.success(), "{}", stderr_of(&out));
    let meta = std::fs::read_to_string(env_dir.join("meta.txt")).unwrap();
    assert!(meta.contains("seed=7\n"), "{meta}");
    assert!(meta.contains("paths=200\n"), "{meta}");

    let flag_dir = dir.path().join("flag");
    let out = riskyval(
        &[
            "cva",
            "--config",
            config.to_str().unwrap(),
            "--out",
            flag_dir.to_str().unwrap(),
            "--seed",
            "9",
            "--paths",
            "300",
        ],
        &[("RISKYVAL_SEED", "7"), ("RISKYVAL_PATHS", "200")],
    );
    assert!(out.status.success(), "{}", stderr_of(&out));
    let meta = std::fs::read_to_string(flag_dir.join("meta.txt")).unwrap();
    assert!(meta.contains("seed=9\n"), "{meta}");
    assert!(meta.contains("paths=300\n"), "{meta}");
}

#[test]
fn malformed_environment_override_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), CVA_CONFIG);
    let out = riskyval(
        &[
            "cva",
            "--config",
            config.to_str().unwrap(),
            "--out",
            dir.path().join("out").to_str().unwrap(),
        ],
        &[("RISKYVAL_PATHS", "plenty")],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr_of(&out).contains("RISKYVAL_PATHS"),
        "{}",
        stderr_of(&out)
    );
}

#[test]
fn reports_are_byte_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), WRONGWAY_CONFIG);
    let mut reports = Vec::new();
    for (threads, sub) in [("1", "a"), ("3", "b")] {
        let out_dir = dir.path().join(sub);
        let out = riskyval(
            &[
                "table-wrongway",
                "--config",
                config.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
            ],
            &[("RAYON_NUM_THREADS", threads)],
        );
        assert!(out.status.success(), "{}", stderr_of(&out));
        reports.push(std::fs::read(out_dir.join("report.csv")).unwrap());
    }
    assert_eq!(reports[0], reports[1], "report bytes depend on threads");
}

#[test]
fn rerunning_into_the_same_directory_replaces_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), PRICE_CONFIG);
    let out_dir = dir.path().join("out");
    for _ in 0..2 {
        let out = riskyval(
            &[
                "price",
                "--config",
                config.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
            ],
            &[],
        );
        assert!(out.status.success(), "{}", stderr_of(&out));
    }
    assert!(out_dir.join("report.csv").exists());
    assert!(!out_dir.join(".report.csv.tmp").exists());
}
