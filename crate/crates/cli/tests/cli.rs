use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use repro_cli::io::{dataset_csv, read_dataset};
use repro_core::candidate::logistic_noise;
use repro_core::synthetic::gen_design;
use repro_core::Dataset;
use serde_json::Value;
use tempfile::TempDir;

fn repro(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_repro"))
        .args(args)
        .env_remove("REPRO_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(args: &[&str]) -> Output {
    let out = repro(args);
    assert_eq!(code(&out), 0, "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// n=40, p=6 with `y = 1{3 x1 - 3 x2 + eps > 0}`.
fn toy_csv(dir: &TempDir) -> PathBuf {
    let x = gen_design(40, 6, 11);
    let eps = logistic_noise(40, 12, 0);
    let y = (0..40).map(|i| if 3.0 * x[(i, 0)] - 3.0 * x[(i, 1)] + eps[i] > 0.0 { 1.0 } else { 0.0 }).collect();
    let file = path(dir, "toy.csv");
    std::fs::write(&file, dataset_csv(&Dataset::new(x, y).unwrap())).unwrap();
    file
}

fn toy_candidates(dir: &TempDir, data: &Path) -> PathBuf {
    let out = path(dir, "cand.json");
    ok(&["candidate", "--data", s(data), "--d", "50", "--s-u", "4", "--seed", "3", "--out", s(&out)]);
    out
}

fn models(v: &Value) -> Vec<Vec<u64>> {
    v["models"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| {
            let tau = m.get("tau").unwrap_or(m);
            tau.as_array().unwrap().iter().map(|i| i.as_u64().unwrap()).collect()
        })
        .collect()
}

#[test]
fn missing_file_exits_with_input_error() {
    let out = repro(&["candidate", "--data", "/nonexistent/data.csv"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read"));
}

#[test]
fn ill_formed_csv_exits_with_input_error() {
    let dir = TempDir::new().unwrap();
    let cases = [
        ("header.csv", "z,x1\n1,0.5\n0,0.2\n"),
        ("text.csv", "y,x1\n1,abc\n0,0.2\n"),
        ("label.csv", "y,x1\n2,0.1\n0,0.2\n"),
        ("ragged.csv", "y,x1,x2\n1,0.1\n0,0.2,0.3\n"),
        ("empty.csv", ""),
    ];
    for (name, text) in cases {
        let file = path(&dir, name);
        std::fs::write(&file, text).unwrap();
        assert_eq!(code(&repro(&["candidate", "--data", s(&file), "--d", "2"])), 2, "{name}");
    }
}

#[test]
fn candidate_set_contains_the_planted_support() {
    let dir = TempDir::new().unwrap();
    let data = toy_csv(&dir);
    let cand = json(&toy_candidates(&dir, &data));
    assert!(models(&cand).contains(&vec![1, 2]), "{:?}", models(&cand));
    assert_eq!(cand["params"]["d"], 50);
    assert!(cand["provenance"].is_object());
}

#[test]
fn commands_are_byte_deterministic() {
    let dir = TempDir::new().unwrap();
    let data = toy_csv(&dir);
    let cand = toy_candidates(&dir, &data);
    let again = path(&dir, "cand2.json");
    ok(&["candidate", "--data", s(&data), "--d", "50", "--s-u", "4", "--seed", "3", "--out", s(&again), "--threads", "2"]);
    assert_eq!(std::fs::read(&cand).unwrap(), std::fs::read(&again).unwrap());

    let run = |file: &str, extra: &[&str]| {
        let out = path(&dir, file);
        let mut args = extra.to_vec();
        args.extend(["--data", s(&data), "--candidates", s(&cand), "--out", s(&out)]);
        ok(&args);
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("b1.json", &["infer", "beta"]), run("b2.json", &["infer", "beta"]));
    let mcs = ["model-cs", "--m", "40", "--seed", "9"];
    assert_eq!(run("m1.json", &mcs), run("m2.json", &mcs));
}

#[test]
fn unselected_coefficient_is_the_zero_singleton() {
    let dir = TempDir::new().unwrap();
    let data = toy_csv(&dir);
    let cand_file = path(&dir, "fixed.json");
    std::fs::write(
        &cand_file,
        r#"{"params":{"d":1,"s_u":3,"loss":"hinge","seed":0,"xi_grid":[0.0]},"models":[[1,2],[1,2,4]],"provenance":{}}"#,
    )
    .unwrap();
    let never = 5;
    let out = path(&dir, "bj.json");
    ok(&["infer", "beta_j", "--data", s(&data), "--candidates", s(&cand_file), "--j", &never.to_string(), "--out", s(&out)]);
    let v = json(&out);
    assert_eq!(v["intervals"], serde_json::json!([[0.0, 0.0]]));
    assert_eq!(v["length"], 0.0);
    assert_eq!(v["column"], never);

    let bad = repro(&["infer", "beta-j", "--data", s(&data), "--candidates", s(&cand_file), "--j", "7"]);
    assert_eq!(code(&bad), 2);
    let zero = repro(&["infer", "beta-j", "--data", s(&data), "--candidates", s(&cand_file), "--j", "0"]);
    assert_eq!(code(&zero), 2);
}

#[test]
fn coefficient_intervals_grow_with_alpha() {
    let dir = TempDir::new().unwrap();
    let data = toy_csv(&dir);
    let cand = toy_candidates(&dir, &data);
    let interval = |alpha: &str| {
        let out = path(&dir, &format!("j{alpha}.json"));
        ok(&["infer", "beta-j", "--data", s(&data), "--candidates", s(&cand), "--j", "1", "--alpha", alpha, "--out", s(&out)]);
        let v = json(&out);
        v["intervals"]
            .as_array()
            .unwrap()
            .iter()
            .map(|iv| (iv[0].as_f64().unwrap(), iv[1].as_f64().unwrap()))
            .collect::<Vec<_>>()
    };
    let narrow = interval("0.9");
    let wide = interval("0.99");
    for (lo, hi) in narrow {
        assert!(wide.iter().any(|&(a, b)| a <= lo && hi <= b), "[{lo}, {hi}] not inside {wide:?}");
    }
}

#[test]
fn zero_row_case_probability_is_one_half_in_every_region() {
    let dir = TempDir::new().unwrap();
    let data = toy_csv(&dir);
    let cand = toy_candidates(&dir, &data);
    let x_new = path(&dir, "xnew.csv");
    std::fs::write(&x_new, "x1,x2,x3,x4,x5,x6\n0,0,0,0,0,0\n").unwrap();
    let out = path(&dir, "case.json");
    ok(&["infer", "caseprob", "--data", s(&data), "--candidates", s(&cand), "--x-new", s(&x_new), "--out", s(&out)]);
    let v = json(&out);
    assert_eq!(v["transform"], "inv_logit");
    let regions = v["regions"].as_array().unwrap();
    assert!(!regions.is_empty());
    for r in regions {
        // a zero row maps every region to the linear point 0, probability 1/2
        assert_eq!(r["df"], 0);
    }
    let wrong_width = path(&dir, "wide.csv");
    std::fs::write(&wrong_width, "0,0,0\n").unwrap();
    let bad = repro(&["infer", "caseprob", "--data", s(&data), "--candidates", s(&cand), "--x-new", s(&wrong_width)]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn abeta_reads_a_matrix_file() {
    let dir = TempDir::new().unwrap();
    let data = toy_csv(&dir);
    let cand = toy_candidates(&dir, &data);
    let a = path(&dir, "a.csv");
    std::fs::write(&a, "1,-1,0,0,0,0\n0,0,1,0,0,0\n").unwrap();
    let out = path(&dir, "ab.json");
    ok(&["infer", "abeta", "--data", s(&data), "--candidates", s(&cand), "--a", s(&a), "--out", s(&out)]);
    let v = json(&out);
    assert_eq!(v["alpha"], 0.95);
    assert!(!v["regions"].as_array().unwrap().is_empty());
    assert_eq!(code(&repro(&["infer", "abeta", "--data", s(&data), "--candidates", s(&cand)])), 2);
}

#[test]
fn empty_candidate_set_is_a_numerical_failure() {
    let dir = TempDir::new().unwrap();
    let data = toy_csv(&dir);
    let cand = path(&dir, "empty.json");
    std::fs::write(
        &cand,
        r#"{"params":{"d":1,"s_u":2,"loss":"hinge","seed":0,"xi_grid":[0.0]},"models":[],"provenance":{}}"#,
    )
    .unwrap();
    assert_eq!(code(&repro(&["infer", "beta", "--data", s(&data), "--candidates", s(&cand)])), 3);
    assert_eq!(code(&repro(&["model-cs", "--data", s(&data), "--candidates", s(&cand)])), 3);
}

#[test]
fn invalid_candidate_files_are_rejected_on_load() {
    let dir = TempDir::new().unwrap();
    let data = toy_csv(&dir);
    let cand = path(&dir, "bad.json");
    // column 9 does not exist in a 6-column dataset
    std::fs::write(
        &cand,
        r#"{"params":{"d":1,"s_u":2,"loss":"hinge","seed":0,"xi_grid":[0.0]},"models":[[1,9]],"provenance":{}}"#,
    )
    .unwrap();
    assert_eq!(code(&repro(&["infer", "beta", "--data", s(&data), "--candidates", s(&cand)])), 2);
    std::fs::write(&cand, "{ not json").unwrap();
    assert_eq!(code(&repro(&["model-cs", "--data", s(&data), "--candidates", s(&cand)])), 2);
}

#[test]
fn model_confidence_set_is_a_nested_subset_of_the_candidates() {
    let dir = TempDir::new().unwrap();
    let data = toy_csv(&dir);
    let cand_file = toy_candidates(&dir, &data);
    let cand = models(&json(&cand_file));
    let run = |alpha: &str| {
        let out = path(&dir, &format!("mcs{alpha}.json"));
        ok(&["model-cs", "--data", s(&data), "--candidates", s(&cand_file), "--m", "40", "--alpha", alpha, "--out", s(&out)]);
        json(&out)
    };
    let low = run("0.5");
    let high = run("0.999");
    for v in [&low, &high] {
        for m in models(v) {
            assert!(cand.contains(&m));
        }
        for t in v["models"].as_array().unwrap() {
            assert!(t["T_hat"].as_f64().unwrap() < v["alpha"].as_f64().unwrap());
        }
        assert_eq!(v["mode"], "mle");
    }
    assert!(models(&high).len() >= models(&low).len());
    assert!(models(&low).iter().all(|m| models(&high).contains(m)));
}

#[test]
fn simulate_writes_the_csv_contract() {
    let dir = TempDir::new().unwrap();
    let a = path(&dir, "a.csv");
    let b = path(&dir, "b.csv");
    let u = path(&dir, "u.csv");
    ok(&["simulate", "--design", "M3", "--n", "10", "--p", "8", "--seed", "4", "--out", s(&a), "--u-out", s(&u)]);
    ok(&["simulate", "--design", "M3", "--n", "10", "--p", "8", "--seed", "4", "--out", s(&b)]);
    let text = std::fs::read_to_string(&a).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 11);
    assert_eq!(lines[0], "y,x1,x2,x3,x4,x5,x6,x7,x8");
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 9));
    assert!(!text.contains('\r'));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(repro_cli::io::read_uniforms(&u).unwrap().len(), 10);
    // round trip through the reader
    let d = read_dataset(&a).unwrap();
    assert_eq!((d.n(), d.p()), (10, 8));
}

#[test]
fn simulated_response_mean_is_moderate() {
    let dir = TempDir::new().unwrap();
    let a = path(&dir, "big.csv");
    ok(&["simulate", "--design", "m3", "--n", "20000", "--p", "8", "--seed", "5", "--out", s(&a)]);
    let d = read_dataset(&a).unwrap();
    let mean = d.y().iter().sum::<f64>() / d.n() as f64;
    assert!((0.35..=0.65).contains(&mean), "mean {mean}");
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "run.cfg");
    std::fs::write(&cfg, "# toy run\ndesign = M3\nn = 12\np = 5\nseed = 8\n").unwrap();
    let from_file = path(&dir, "f.csv");
    let from_flags = path(&dir, "g.csv");
    let overridden = path(&dir, "h.csv");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&from_file)]);
    ok(&["simulate", "--design", "M3", "--n", "12", "--p", "5", "--seed", "8", "--out", s(&from_flags)]);
    ok(&["simulate", "--config", s(&cfg), "--seed", "9", "--out", s(&overridden)]);
    assert_eq!(std::fs::read(&from_file).unwrap(), std::fs::read(&from_flags).unwrap());
    assert_ne!(std::fs::read(&from_file).unwrap(), std::fs::read(&overridden).unwrap());

    std::fs::write(&cfg, "colour = blue\n").unwrap();
    assert_eq!(code(&repro(&["simulate", "--config", s(&cfg)])), 2);
    assert_eq!(code(&repro(&["simulate", "--config", "/nonexistent.cfg"])), 2);
}

#[test]
fn thread_settings_do_not_change_results() {
    let dir = TempDir::new().unwrap();
    let data = toy_csv(&dir);
    let one = path(&dir, "one.json");
    let two = path(&dir, "two.json");
    ok(&["candidate", "--data", s(&data), "--d", "12", "--seed", "2", "--threads", "1", "--out", s(&one)]);
    let out = Command::new(env!("CARGO_BIN_EXE_repro"))
        .args(["candidate", "--data", s(&data), "--d", "12", "--seed", "2", "--out", s(&two)])
        .env("REPRO_THREADS", "3")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read(&one).unwrap(), std::fs::read(&two).unwrap());
    let bad = Command::new(env!("CARGO_BIN_EXE_repro"))
        .args(["simulate", "--n", "5", "--p", "2"])
        .env("REPRO_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(code(&bad), 2);
}

#[test]
fn argument_validation() {
    let dir = TempDir::new().unwrap();
    let data = toy_csv(&dir);
    for args in [
        vec!["candidate", "--data", s(&data), "--d", "0"],
        vec!["candidate", "--data", s(&data), "--s-u", "0"],
        vec!["candidate", "--data", s(&data), "--loss", "squared"],
        vec!["candidate", "--data", s(&data), "--xi-grid", "0,2"],
        vec!["infer", "beta", "--data", s(&data), "--alpha", "1.5"],
        vec!["model-cs", "--data", s(&data), "--m", "0"],
        vec!["model-cs", "--data", s(&data), "--mode", "bayes"],
        vec!["benchmark", "--preset", "m9-desk"],
    ] {
        assert_eq!(code(&repro(&args)), 2, "{args:?}");
    }
}

#[test]
fn benchmark_contract() {
    assert_eq!(code(&repro(&["benchmark", "--preset", "toy", "--reps", "0"])), 2);
    let dir = TempDir::new().unwrap();
    let report = path(&dir, "report.json");
    let out = ok(&["benchmark", "--preset", "toy", "--reps", "2", "--seed", "3", "--out", s(&report)]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("candidate set (hinge)"));
    assert!(table.contains("model confidence set"));
    let v = json(&report);
    assert_eq!(v["completed"], 2);
    assert_eq!(v["incomplete"], false);
    for row in v["rows"].as_array().unwrap() {
        let cov = row["coverage"]["mean"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&cov));
        assert!(row["coverage"]["sd"].as_f64().unwrap() >= 0.0);
    }
}
