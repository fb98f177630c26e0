use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const EFFECT_PROFILES: &str = r#"[{"label":"x=0","x":0},{"label":"x=1","x":1}]"#;

fn nbs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nbs"))
        .args(args)
        .output()
        .expect("spawn nbs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, scenario: &str, n: &str, extra: &[&str]) {
    let mut args = vec![
        "simulate",
        "--scenario",
        scenario,
        "--n",
        n,
        "--seed",
        "7",
        "--out",
        path(dir),
    ];
    args.extend_from_slice(extra);
    let o = nbs(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn simulate_writes_requested_rows_and_censoring() {
    let t = TempDir::new().unwrap();
    simulate(t.path(), "effect", "500", &["--censoring", "0.10"]);
    let csv = fs::read_to_string(t.path().join("data.csv")).unwrap();
    assert_eq!(csv.lines().count(), 501);
    let m = json(&t.path().join("manifest.json"));
    assert_eq!(m["seed"], 7);
    let cens = m["details"]["realized_censoring"].as_f64().unwrap();
    assert!((cens - 0.10).abs() < 0.04, "realized censoring {cens}");
    assert!(m["outputs"].as_array().unwrap().iter().any(|o| o == "data.csv"));
}

#[test]
fn same_seed_gives_identical_bytes() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for d in [&a, &b] {
        simulate(d.path(), "null", "300", &["--censoring", "0.30"]);
    }
    let read = |d: &TempDir| fs::read(d.path().join("data.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    let c = TempDir::new().unwrap();
    let o = nbs(&[
        "simulate",
        "--scenario",
        "null",
        "--n",
        "300",
        "--censoring",
        "0.30",
        "--seed",
        "8",
        "--out",
        path(c.path()),
    ]);
    assert_eq!(code(&o), 0);
    assert_ne!(read(&a), read(&c));
}

#[test]
fn usage_errors_exit_2() {
    let t = TempDir::new().unwrap();
    let out = path(t.path());
    for args in [
        vec!["simulate", "--scenario", "bogus", "--out", out],
        vec!["simulate", "--scenario", "effect", "--censoring", "0.2", "--out", out],
        vec![
            "simulate",
            "--scenario",
            "null",
            "--confounding",
            "cost:high",
            "--out",
            out,
        ],
        vec!["simulate", "--scenario", "analogue", "--censoring", "0.1", "--out", out],
        vec!["replicate", "--table", "4", "--out", out],
        vec!["replicate", "--table", "3", "--censoring", "0.1", "--out", out],
        vec!["plot", "--ced", "/nonexistent/ced.csv", "--out", out],
    ] {
        let o = nbs(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn missing_column_exits_2() {
    let t = TempDir::new().unwrap();
    simulate(t.path(), "effect", "200", &[]);
    let csv = fs::read_to_string(t.path().join("data.csv")).unwrap();
    let trimmed: String = csv
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string() + "\n")
        .collect();
    let bad = t.path().join("bad.csv");
    fs::write(&bad, trimmed).unwrap();
    let o = nbs(&[
        "estimate",
        "--data",
        path(&bad),
        "--schema",
        path(&t.path().join("schema.json")),
        "--profiles",
        EFFECT_PROFILES,
        "--out",
        path(&t.path().join("est")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("\"l\""));
}

#[test]
fn model_failure_exits_1() {
    let t = TempDir::new().unwrap();
    simulate(t.path(), "effect", "200", &[]);
    let data = t.path().join("data.csv");
    let csv = fs::read_to_string(&data).unwrap();
    // every subject censored: no events to fit
    let censored: String = csv
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                return format!("{l}\n");
            }
            let f: Vec<&str> = l.split(',').collect();
            format!("{},{},,1,1,{},{}\n", f[0], f[1], f[5], f[6])
        })
        .collect();
    fs::write(&data, censored).unwrap();
    let o = nbs(&[
        "estimate",
        "--data",
        path(&data),
        "--schema",
        path(&t.path().join("schema.json")),
        "--survival",
        "A + x + A:x + l",
        "--cost",
        "A + Z",
        "--probit",
        "x",
        "--profiles",
        EFFECT_PROFILES,
        "--out",
        path(&t.path().join("est")),
    ]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
}

fn estimate_effect(dir: &Path, data_dir: &Path, extra: &[&str]) -> Value {
    let data = data_dir.join("data.csv");
    let schema = data_dir.join("schema.json");
    let mut args = vec![
        "estimate",
        "--data",
        path(&data),
        "--schema",
        path(&schema),
        "--survival",
        "A + x + A:x + l",
        "--cost",
        "A + Z",
        "--probit",
        "x",
        "--profiles",
        EFFECT_PROFILES,
        "--lambda",
        "2,12",
        "--seed",
        "3",
        "--out",
        path(dir),
    ];
    args.extend_from_slice(extra);
    let o = nbs(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["results.json", "ced.csv", "ced.svg", "manifest.json"] {
        assert!(dir.join(f).exists(), "{f} missing");
    }
    json(&dir.join("results.json"))
}

#[test]
fn no_bootstrap_gives_no_interval_fields() {
    let t = TempDir::new().unwrap();
    simulate(t.path(), "effect", "400", &[]);
    let r = estimate_effect(&t.path().join("est"), t.path(), &["--bootstrap", "0"]);
    for row in r["estimates"]
        .as_array()
        .unwrap()
        .iter()
        .chain(r["coefficients"].as_array().unwrap())
    {
        let o = row.as_object().unwrap();
        assert!(!o.contains_key("ci_lower") && !o.contains_key("ci_upper") && !o.contains_key("se"));
    }
    assert!(r.get("bootstrap").is_none() && r.get("tests").is_none());
    let ced = fs::read_to_string(t.path().join("est/ced.csv")).unwrap();
    assert!(ced.lines().nth(1).unwrap().contains(",,"));
}

#[test]
fn bootstrap_gives_intervals_tests_and_replicates() {
    let t = TempDir::new().unwrap();
    simulate(t.path(), "effect", "400", &[]);
    let dir = t.path().join("est");
    let r = estimate_effect(&dir, t.path(), &["--bootstrap", "10", "--replicates-csv"]);
    for row in r["estimates"].as_array().unwrap() {
        let (lo, th, hi) = (
            row["ci_lower"].as_f64().unwrap(),
            row["theta"].as_f64().unwrap(),
            row["ci_upper"].as_f64().unwrap(),
        );
        assert!(lo <= th && th <= hi);
    }
    let tests = r["tests"].as_array().unwrap();
    assert_eq!(tests.len(), 2);
    assert_eq!(tests[0]["coefficients"][0], "x");
    let reps = fs::read_to_string(dir.join("replicates.csv")).unwrap();
    assert_eq!(reps.lines().count(), 1 + 10 * 2);
    let m = json(&dir.join("manifest.json"));
    assert_eq!(m["config"]["bootstrap"], 10);
    assert_eq!(m["config"]["pipeline"]["seed"], 3);
}

#[test]
fn estimate_is_deterministic() {
    let t = TempDir::new().unwrap();
    simulate(t.path(), "effect", "300", &[]);
    let a = t.path().join("a");
    let b = t.path().join("b");
    estimate_effect(&a, t.path(), &["--bootstrap", "4"]);
    estimate_effect(&b, t.path(), &["--bootstrap", "4"]);
    for f in ["results.json", "ced.csv", "ced.svg"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn estimate_recovers_effect_scenario_truth() {
    let t = TempDir::new().unwrap();
    simulate(t.path(), "effect", "5000", &["--censoring", "0.10"]);
    let r = estimate_effect(&t.path().join("est"), t.path(), &["--M", "20000"]);
    let truth = [0.353, 0.588, 0.527, 0.746];
    for (row, want) in r["estimates"].as_array().unwrap().iter().zip(truth) {
        let got = row["theta"].as_f64().unwrap();
        assert!((got - want).abs() < 0.03, "{row}: {got} vs {want}");
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let t = TempDir::new().unwrap();
    simulate(t.path(), "effect", "300", &[]);
    let cfg = t.path().join("config.json");
    fs::write(&cfg, r#"{"lambdas": [1, 5, 9], "m_draws": 700, "probit_formula": "x"}"#).unwrap();
    let dir = t.path().join("est");
    let o = nbs(&[
        "estimate",
        "--data",
        path(&t.path().join("data.csv")),
        "--schema",
        path(&t.path().join("schema.json")),
        "--config",
        path(&cfg),
        "--lambda",
        "4,8",
        "--profiles",
        EFFECT_PROFILES,
        "--out",
        path(&dir),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&dir.join("manifest.json"));
    assert_eq!(m["config"]["pipeline"]["lambdas"], serde_json::json!([4.0, 8.0]));
    assert_eq!(m["config"]["pipeline"]["m_draws"], 700);
}

#[test]
fn fit_then_estimate_with_saved_models() {
    let t = TempDir::new().unwrap();
    simulate(t.path(), "effect", "400", &[]);
    let fit_dir = t.path().join("fit");
    let o = nbs(&[
        "fit",
        "--data",
        path(&t.path().join("data.csv")),
        "--schema",
        path(&t.path().join("schema.json")),
        "--survival",
        "A + x + A:x + l",
        "--cost",
        "A + Z",
        "--out",
        path(&fit_dir),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let models = fit_dir.join("models.json");
    let refit = estimate_effect(&t.path().join("e1"), t.path(), &[]);
    let saved = estimate_effect(&t.path().join("e2"), t.path(), &["--models", path(&models)]);
    assert_eq!(refit["estimates"], saved["estimates"]);
    let o = nbs(&[
        "estimate",
        "--data",
        path(&t.path().join("data.csv")),
        "--schema",
        path(&t.path().join("schema.json")),
        "--profiles",
        EFFECT_PROFILES,
        "--models",
        path(&models),
        "--bootstrap",
        "5",
        "--out",
        path(&t.path().join("e3")),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn plot_redraws_primary_range() {
    let t = TempDir::new().unwrap();
    simulate(t.path(), "effect", "300", &[]);
    let dir = t.path().join("est");
    estimate_effect(&dir, t.path(), &["--primary-range", "0,5"]);
    let ced = fs::read_to_string(dir.join("ced.csv")).unwrap();
    assert!(ced.contains("true") && ced.contains("false"));
    let svg = t.path().join("plot.svg");
    let o = nbs(&[
        "plot",
        "--ced",
        path(&dir.join("ced.csv")),
        "--primary-range",
        "0,20",
        "--out",
        path(&svg),
    ]);
    assert_eq!(code(&o), 0);
    assert!(fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn replicate_smoke_single_simulation() {
    let t = TempDir::new().unwrap();
    let o = nbs(&[
        "replicate",
        "--table",
        "1",
        "--sims",
        "1",
        "--bootstrap",
        "3",
        "--n",
        "300",
        "--censoring",
        "0.1",
        "--M",
        "500",
        "--oracle",
        "20000",
        "--out",
        path(t.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(t.path().join("table1.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let txt = fs::read_to_string(t.path().join("table1.txt")).unwrap();
    assert!(txt.contains("1 of 1 replications succeeded"));
}

#[test]
fn analogue_runs_through_estimate() {
    let t = TempDir::new().unwrap();
    simulate(t.path(), "analogue", "800", &[]);
    let dir = t.path().join("est");
    let o = nbs(&[
        "estimate",
        "--data",
        path(&t.path().join("data.csv")),
        "--schema",
        path(&t.path().join("schema.json")),
        "--survival",
        "A + stage + charlson + age + A:stage",
        "--cost",
        "A + charlson + age + Z",
        "--cost-family",
        "zero-inflated",
        "--probit",
        "stage + charlson",
        "--profiles",
        r#"[{"stage":"I","charlson":"0"},{"stage":"II","charlson":"2+"}]"#,
        "--lambda",
        "50000,90000",
        "--M",
        "1000",
        "--out",
        path(&dir),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&dir.join("results.json"));
    assert_eq!(r["estimates"].as_array().unwrap().len(), 4);
}
