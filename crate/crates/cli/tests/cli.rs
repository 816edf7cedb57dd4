//! End-to-end runs of the `fairalloc` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const MODEL: &str = r#"{"mu": [0.001, -0.0005, 0.0002], "sigma": [[0.0004, 0.0001, 0.0], [0.0001, 0.0002, 0.00005], [0.0, 0.00005, 0.0003]]}"#;

fn fairalloc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairalloc"))
        .current_dir(dir)
        .env("FAIRALLOC_CACHE", dir.join("cache.txt"))
        .args(args)
        .output()
        .expect("run fairalloc")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = fairalloc(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn simulated(dir: &Path, days: &str) {
    fs::write(dir.join("model.json"), MODEL).unwrap();
    ok(dir, &["simulate", "--model", "gaussian", "--params", "model.json", "--days", days, "--seed", "3", "--out", "sim.csv"]);
}

fn parse_csv(text: &str) -> Vec<Vec<String>> {
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn mean_allocation_of_two_rows_is_negated_column_means() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("p.csv"), "date,a,b\n2024-01-02,1.0,-2.0\n2024-01-03,3.0,0.5\n").unwrap();
    ok(dir.path(), &["allocate", "--input", "p.csv", "--estimator", "mean", "--alpha", "0.05", "--output", "out.csv"]);
    let text = fs::read_to_string(dir.path().join("out.csv")).unwrap();
    assert_eq!(text, "date,a_1,a_2,total\n2024-01-03,-2,0.75,-1.25\n");
}

#[test]
fn np_hat_on_five_rows_uses_the_single_worst_row() {
    let dir = tempfile::tempdir().unwrap();
    let csv = "date,a,b\n2024-01-01,0.1,0.2\n2024-01-02,-0.5,0.1\n2024-01-03,0.3,-0.1\n2024-01-04,0.0,0.0\n2024-01-05,0.2,0.2\n";
    fs::write(dir.path().join("p.csv"), csv).unwrap();
    ok(dir.path(), &["allocate", "--input", "p.csv", "--estimator", "np-hat", "--alpha", "0.05", "--output", "out.csv"]);
    let rows = parse_csv(&fs::read_to_string(dir.path().join("out.csv")).unwrap());
    assert_eq!(rows[1], ["2024-01-05", "0.5", "-0.1", "0.4"]);
}

#[test]
fn rolling_allocation_has_one_row_per_evaluation_day() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), "40");
    ok(dir.path(), &["allocate", "--input", "sim.csv", "--estimator", "gaussian-plugin", "--alpha", "0.05", "--window", "30", "--output", "out.csv"]);
    let rows = parse_csv(&fs::read_to_string(dir.path().join("out.csv")).unwrap());
    assert_eq!(rows.len(), 11);
    assert_eq!(rows[0], ["date", "a_1", "a_2", "a_3", "total"]);
    // the first evaluation day is the 31st date of the panel
    let sim = parse_csv(&fs::read_to_string(dir.path().join("sim.csv")).unwrap());
    assert_eq!(rows[1][0], sim[31][0]);
    for r in &rows[1..] {
        let a: Vec<f64> = r[1..].iter().map(|x| x.parse().unwrap()).collect();
        assert!((a[0] + a[1] + a[2] - a[3]).abs() < 1e-10);
    }
}

#[test]
fn gaussian_fair_solves_on_a_cold_cache_and_reuses_it() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), "60");
    let cache = dir.path().join("cache.txt");
    assert!(!cache.exists());
    let args = [
        "allocate", "--input", "sim.csv", "--estimator", "gaussian-fair", "--alpha", "0.05", "--window", "50",
        "--bn-samples", "200000", "--output", "out.csv",
    ];
    let first = ok(dir.path(), &args);
    assert!(stderr(&first).contains("solved b_50"));
    let record = fs::read_to_string(&cache).unwrap();
    assert!(record.lines().any(|l| l.starts_with("50 0.05 ")), "{record}");
    let out1 = fs::read(dir.path().join("out.csv")).unwrap();

    let second = ok(dir.path(), &args);
    assert!(!stderr(&second).contains("solved"));
    assert_eq!(fs::read_to_string(&cache).unwrap(), record);
    assert_eq!(fs::read(dir.path().join("out.csv")).unwrap(), out1);
}

#[test]
fn bn_prints_its_record_and_hits_the_cache_next_time() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["bn", "--n", "30", "--alpha", "0.05", "--samples", "200000"];
    let first = ok(dir.path(), &args);
    let line = String::from_utf8(first.stdout).unwrap();
    let fields: Vec<&str> = line.split_whitespace().collect();
    assert_eq!(fields.len(), 5);
    assert_eq!(&fields[..2], ["30", "0.05"]);
    assert_eq!(fields[4], "mc-root");
    let b: f64 = fields[2].parse().unwrap();
    assert!(b > 2.0627 && b < 2.4, "{b}");

    let second = ok(dir.path(), &args);
    assert_eq!(String::from_utf8_lossy(&second.stdout), line);
    assert!(stderr(&second).contains("cache hit"));
}

#[test]
fn bn_rejects_a_single_observation() {
    let dir = tempfile::tempdir().unwrap();
    let out = fairalloc(dir.path(), &["bn", "--n", "1", "--alpha", "0.05"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error: InvalidN: "), "{err}");
    assert!(!dir.path().join("cache.txt").exists());
}

#[test]
fn student_t_without_nu_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("model.json"), MODEL).unwrap();
    let out = fairalloc(
        dir.path(),
        &["simulate", "--model", "student-t", "--params", "model.json", "--days", "10", "--seed", "1", "--out", "t.csv"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error: InvalidInput: "), "{}", stderr(&out));
    assert!(!dir.path().join("t.csv").exists());
}

#[test]
fn errors_are_single_machine_readable_lines() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.csv"), "date,a\n2024-01-02,0.1\n2024-01-01,0.2\n").unwrap();
    let cases: [(&[&str], &str); 3] = [
        (&["allocate", "--input", "missing.csv", "--estimator", "mean", "--alpha", "0.05", "--output", "o.csv"], "Io"),
        (&["allocate", "--input", "bad.csv", "--estimator", "mean", "--alpha", "0.05", "--output", "o.csv"], "NonMonotoneDates"),
        (&["allocate", "--input", "bad.csv", "--estimator", "mean", "--alpha", "1.5", "--output", "o.csv"], "InvalidInput"),
    ];
    for (args, kind) in cases {
        let out = fairalloc(dir.path(), args);
        assert_eq!(out.status.code(), Some(1));
        let err = stderr(&out);
        assert_eq!(err.lines().count(), 1, "{err}");
        assert!(err.starts_with(&format!("error: {kind}: ")), "{err}");
    }
}

#[test]
fn backtest_report_is_sum_consistent_and_unfairness_is_not_an_error() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), "600");
    // the mean allocation badly understates tail risk, yet the run succeeds
    let out = ok(
        dir.path(),
        &["backtest", "--input", "sim.csv", "--estimator", "mean", "--alpha", "0.05", "--window", "100", "--grid", "0.001",
          "--report", "r.json", "--curves", "c.csv"],
    );
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("m=500 "));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    let g = report["g_total_at_alpha"].as_f64().unwrap();
    let gi: f64 = report["g_margin_at_alpha"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((g - gi).abs() <= 1e-11 * g.abs().max(1e-3), "{g} vs {gi}");
    assert!(g > 0.0);
    assert_eq!(report["estimator"], "mean");
    assert_eq!(report["m"], 500);
    assert_eq!(report["w"].as_array().unwrap().len(), 3);

    let curves = parse_csv(&fs::read_to_string(dir.path().join("c.csv")).unwrap());
    assert_eq!(curves[0], ["beta", "g_total", "g_1", "g_2", "g_3"]);
    assert_eq!(curves.len(), 1001);
    for row in &curves[1..] {
        let v: Vec<f64> = row.iter().map(|x| x.parse().unwrap()).collect();
        assert!((v[1] - v[2] - v[3] - v[4]).abs() <= 1e-10 * v[1].abs().max(1e-3));
    }
}

#[test]
fn external_allocations_reproduce_the_builtin_backtest() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), "300");
    let p = dir.path();
    ok(p, &["allocate", "--input", "sim.csv", "--estimator", "np-hat", "--alpha", "0.05", "--window", "100", "--output", "a.csv"]);
    ok(p, &["backtest", "--input", "sim.csv", "--estimator", "np-hat", "--alpha", "0.05", "--window", "100", "--report", "r1.json", "--curves", "c1.csv"]);
    ok(p, &["backtest", "--input", "sim.csv", "--estimator", "external", "--alpha", "0.05", "--allocations", "a.csv", "--report", "r2.json", "--curves", "c2.csv"]);
    let r1: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("r1.json")).unwrap()).unwrap();
    let r2: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("r2.json")).unwrap()).unwrap();
    assert_eq!(r1["m"], r2["m"]);
    let (g1, g2) = (r1["g_total_at_alpha"].as_f64().unwrap(), r2["g_total_at_alpha"].as_f64().unwrap());
    // allocations pass through 12-digit text, so agreement is to that precision
    assert!((g1 - g2).abs() <= 1e-10 * g1.abs().max(1e-3), "{g1} vs {g2}");
    assert_eq!(r1["upsilon"], r2["upsilon"]);
}

#[test]
fn seeded_runs_are_byte_identical_under_any_thread_count() {
    let run = |threads: &str| {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        fs::write(p.join("model.json"), MODEL).unwrap();
        let t = ["--threads", threads];
        let with = |args: &[&str]| -> Vec<String> { t.iter().chain(args).map(|s| s.to_string()).collect() };
        let call = |args: Vec<String>| {
            let refs: Vec<&str> = args.iter().map(String::as_str).collect();
            ok(p, &refs)
        };
        call(with(&["simulate", "--model", "gaussian", "--params", "model.json", "--days", "400", "--seed", "5", "--out", "s.csv"]));
        call(with(&["backtest", "--input", "s.csv", "--estimator", "np-check", "--alpha", "0.1", "--window", "60",
                    "--report", "r.json", "--curves", "c.csv", "--exact"]));
        let bn = call(with(&["bn", "--n", "25", "--alpha", "0.1", "--samples", "100000"])).stdout;
        ["s.csv", "r.json", "c.csv"]
            .iter()
            .map(|f| fs::read(p.join(f)).unwrap())
            .chain([bn])
            .collect::<Vec<_>>()
    };
    let one = run("1");
    assert_eq!(one, run("1"));
    assert_eq!(one, run("4"));
}

#[test]
fn every_subcommand_documents_its_flags() {
    let dir = tempfile::tempdir().unwrap();
    let expected: [(&str, &[&str]); 4] = [
        ("allocate", &["--input", "--estimator", "--alpha", "--window", "--output", "--weights", "--threads"]),
        ("backtest", &["--input", "--estimator", "--alpha", "--window", "--grid", "--report", "--curves", "--seed", "--exact"]),
        ("simulate", &["--model", "--params", "--days", "--seed", "--out"]),
        ("bn", &["--n", "--alpha", "--samples", "--tol", "--seed"]),
    ];
    for (cmd, flags) in expected {
        let out = ok(dir.path(), &[cmd, "--help"]);
        let help = String::from_utf8(out.stdout).unwrap();
        for flag in flags {
            assert!(help.contains(flag), "{cmd} --help lacks {flag}");
        }
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = fairalloc(dir.path(), &["allocate", "--estimator", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
}
