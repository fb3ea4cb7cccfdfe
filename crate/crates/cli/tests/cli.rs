use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_infobound"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("bad JSON ({e}): {}", String::from_utf8_lossy(&out.stdout))
    })
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn verify_exact_identity_instance() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["verify-exact", "--config", path_str(&config("identity.json")), "--out", path_str(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = stdout_json(&out);
    assert!((report["cmi_2"].as_f64().unwrap() - 0.346574).abs() < 1e-6);
    assert_eq!(report["all_hold"], json!(true));
    assert!(dir.path().join("report.json").exists());

    let bits = stdout_json(&run(&["verify-exact", "--config", path_str(&config("identity.json")), "--bits"]));
    assert!((bits["iomi"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(bits["units"], json!("bits"));
}

#[test]
fn verify_exact_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(run(&["verify-exact", "--config", path_str(&bad)]).status.code(), Some(2));
    assert_eq!(
        run(&["verify-exact", "--config", path_str(&dir.path().join("missing.json"))]).status.code(),
        Some(2)
    );
    assert_eq!(run(&["verify-exact"]).status.code(), Some(2));

    // 2^12 samples with deterministic outputs: the width-2 supersample is
    // far beyond the enumeration budget
    let n = 12;
    let rows: Vec<Value> = (0..1usize << n).map(|s| json!(if s % 2 == 0 { [1.0, 0.0] } else { [0.0, 1.0] })).collect();
    let big = json!({
        "problem": {"data_pmf": [0.5, 0.5], "n": n, "loss": [[0.0, 1.0], [1.0, 0.0]], "algorithm": rows},
        "k": 2
    });
    let path = dir.path().join("big.json");
    std::fs::write(&path, big.to_string()).unwrap();
    assert_eq!(run(&["verify-exact", "--config", path_str(&path)]).status.code(), Some(3));
}

#[test]
fn ld_bound_writes_schema_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("quick.json");
    let mut csvs = vec![];
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = run(&["ld-bound", "--config", path_str(&cfg), "--seed", "7", "--out", path_str(&out_dir)]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(out_dir.join("summary.json").exists());
        csvs.push(std::fs::read_to_string(out_dir.join("curve.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    let header = csvs[0].lines().next().unwrap();
    assert_eq!(
        header,
        "t,cmi_mean,cmi_stderr,cmi_opt_mean,li_dd,negrea_dd,li_lip,negrea_lip,test_err_sq_mean,zeta_sq_mean,incoherence_mean,train01,test01,ege_hat"
    );
    assert_eq!(csvs[0].lines().count(), 61);
    let other = run(&["ld-bound", "--config", path_str(&cfg), "--seed", "8", "--out", path_str(&dir.path().join("c"))]);
    assert_eq!(other.status.code(), Some(0));
    assert_ne!(std::fs::read_to_string(dir.path().join("c/curve.csv")).unwrap(), csvs[0]);
}

#[test]
fn constant_half_matches_closed_form_on_constant_zeta_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "ld-bound",
        "--config",
        path_str(&config("constant_zeta.json")),
        "--theta",
        "constant-half",
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    // candidates are ±1 points, so ‖ζ‖² ∈ {0, 4} and is fixed along a run;
    // with θ ≡ 1/2 each repetition contributes √(Tβη)·‖ζ‖/(2√2 n)
    let csv = std::fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let zeta_sq_mean: f64 = row[9].parse().unwrap();
    let (t, beta, eta, n) = (100.0f64, 1.0, 0.01, 10.0);
    let expected = zeta_sq_mean / 2.0 * (t * beta * eta).sqrt() / (2.0 * 2f64.sqrt() * n);
    let got = summary["cmi"].as_f64().unwrap();
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    assert!(zeta_sq_mean > 0.0);
}

#[test]
fn compare_fills_baselines_and_envelope_holds() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["compare", "--config", path_str(&config("quick.json")), "--out", path_str(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    for key in ["cmi", "cmi_opt", "li_dd", "negrea_dd", "li_lip", "negrea_lip"] {
        assert!(summary[key].is_number(), "{key} missing");
    }
    let mut rdr = std::fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    rdr = rdr.split_off(rdr.find('\n').unwrap() + 1);
    for line in rdr.lines() {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(cols[1] <= cols[6], "cmi {} above li_lip {}", cols[1], cols[6]);
    }

    let off = dir.path().join("off");
    let out = run(&["compare", "--config", path_str(&config("quick.json")), "--baselines", "none", "--out", path_str(&off)]);
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(off.join("curve.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert!(row[4..8].iter().all(|c| c.is_empty()));
    assert!(stdout_json(&out)["li_dd"].is_null());
}

#[test]
fn theta_opt_reports_held_out_value() {
    let out = run(&["theta-opt", "--config", path_str(&config("quick.json")), "--theta", "erf"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert!(v["theta"].as_str().unwrap().starts_with("erf:"));
    let train: Vec<u64> = serde_json::from_value(v["train_reps"].clone()).unwrap();
    let test: Vec<u64> = serde_json::from_value(v["test_reps"].clone()).unwrap();
    assert_eq!(train, vec![0, 2, 4]);
    assert_eq!(test, vec![1, 3, 5]);
}

#[test]
fn info_formulas() {
    let v = stdout_json(&run(&["info", "fano", "--cmi", "0.0", "--n", "1", "--k", "2"]));
    assert!((v["fano_lower"].as_f64().unwrap() - 0.0).abs() < 1e-12);
    let v = stdout_json(&run(&["info", "lipschitz", "--lipschitz", "1", "--n", "10", "--steps", "4", "--eta", "0.25", "--beta", "1"]));
    assert!((v["li_lip"].as_f64().unwrap() - 0.1414213562373095).abs() < 1e-12);
    let v = stdout_json(&run(&["info", "improved-constant", "--cmi", "1", "--n", "1000000"]));
    let ratio = v["improved_constant_limit"].as_f64().unwrap() / (1.0f64 / 2e6).sqrt();
    assert!((1.0..=1.05).contains(&ratio));
    assert_eq!(run(&["info", "fano", "--cmi", "-1", "--n", "1", "--k", "2"]).status.code(), Some(2));
}

#[test]
fn bundled_desk_config_is_the_default() {
    let text = std::fs::read_to_string(config("desk.json")).unwrap();
    let mut c = infobound::ExperimentConfig::from_json_str(&text).unwrap();
    c.output = Default::default();
    assert_eq!(c, infobound::ExperimentConfig::default());
}
