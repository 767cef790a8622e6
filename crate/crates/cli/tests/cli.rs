use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use transfers::io::{read_json, Report};
use transfers::measure::{CostMatrix, ProbMeasure};
use transfers::solvers::transport::solve_transport_lp;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn transfer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_transfer")).args(args).env_remove("TRANSFER_TOL").output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn report(out: &Output) -> Report {
    Report::validate_json(std::str::from_utf8(&out.stdout).unwrap()).expect("report re-validates")
}

fn claim(r: &Report, name: &str) -> f64 {
    r.claims.iter().find(|c| c.name == name).unwrap_or_else(|| panic!("no claim {name}")).value
}

#[test]
fn eval_by_kind_matches_the_lp() {
    let (cost, mu, nu) = (fixture("cost.json"), fixture("mu.json"), fixture("nu.json"));
    let c: CostMatrix = read_json(&cost).unwrap();
    let (m, n): (ProbMeasure, ProbMeasure) = (read_json(&mu).unwrap(), read_json(&nu).unwrap());
    let oracle = solve_transport_lp(&c, &m, &n).unwrap().value;

    let out = transfer(&["eval", "--transfer", "mk", "--cost", path(&cost), "--mu", path(&mu), "--nu", path(&nu)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out);
    assert_eq!(r.verb, "eval");
    assert!((claim(&r, "primal") - oracle).abs() <= 1e-12);
    assert_eq!(oracle, 1.5);

    let by_file = transfer(&["eval", "--transfer", path(&fixture("transfers/mk.json")), "--mu", path(&mu), "--nu", path(&nu)]);
    assert_eq!(claim(&report(&by_file), "primal"), oracle);
}

#[test]
fn kam_on_the_zero_cost() {
    let out = transfer(&["kam", "--transfer", "mk", "--cost", path(&fixture("zero_cost.json"))]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(claim(&r, "ell"), 0.0);
    let u: Vec<f64> = serde_json::from_value(r.values["u"].clone()).unwrap();
    assert_eq!(u, vec![0.0; 3]);
}

#[test]
fn kam_csv_trace() {
    let out = transfer(&["kam", "--transfer", "mk", "--cost", path(&fixture("cost.json")), "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,M_n,m_n,residual"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert!(!rows.is_empty());
    // M_n ≥ m_n and n counts up from 1
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0], (i + 1) as f64);
        assert!(r[1] >= r[2]);
    }
}

#[test]
fn negative_lambda_is_an_input_error() {
    let out = transfer(&["ineq", "--spec", path(&fixture("bad_lambda.json"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("schema error at rhs.lambda"), "{err}");
    assert!(out.stdout.is_empty());
}

#[test]
fn malformed_json_reports_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let text = std::fs::read_to_string(fixture("transfers/mk.json")).unwrap().replacen("[0, 3, 1]", "[0, \"three\", 1]", 1);
    std::fs::write(&bad, text).unwrap();
    let out = transfer(&["eval", "--transfer", path(&bad), "--mu", path(&fixture("mu.json")), "--nu", path(&fixture("nu.json"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("cost.entries[0][1]"), "{err}");
}

#[test]
fn space_mismatch_is_an_input_error() {
    let out = transfer(&[
        "eval",
        "--transfer",
        path(&fixture("transfers/brenier.json")),
        "--mu",
        path(&fixture("mu.json")),
        "--nu",
        path(&fixture("nu.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("space mismatch"));
}

#[test]
fn ineq_pinsker_holds() {
    let out = transfer(&["ineq", "--spec", path(&fixture("pinsker.json"))]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out);
    assert_eq!(r.values["status"], Value::from("HOLDS"));
    assert!(claim(&r, "primal_gap") >= -1e-9);
}

#[test]
fn entropy_with_a_closed_form_witness() {
    let out = transfer(&[
        "entropy",
        "--entropy",
        path(&fixture("log_entropy.json")),
        "--mu",
        path(&fixture("nu.json")),
        "--nu",
        path(&fixture("nu.json")),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(claim(&r, "primal"), 0.0);
    assert!(claim(&r, "dual_at_witness").abs() <= 1e-12);

    // ν not absolutely continuous: infinite primal, nothing to certify
    let out = transfer(&[
        "entropy",
        "--entropy",
        path(&fixture("log_entropy.json")),
        "--mu",
        path(&fixture("mu.json")),
        "--nu",
        path(&fixture("nu.json")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(claim(&report(&out), "primal"), f64::INFINITY);
}

#[test]
fn convolve_and_tensor() {
    let (mk, tv) = (fixture("transfers/mk.json"), fixture("transfers/tv.json"));
    let (mu, nu) = (fixture("mu.json"), fixture("nu.json"));
    let out = transfer(&["convolve", "--part", path(&mk), "--part", path(&mk), "--mu", path(&mu), "--nu", path(&nu)]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert!((claim(&r, "dual") - claim(&r, "min_plus_mk")).abs() <= 1e-5);

    let out = transfer(&[
        "tensor",
        "--left",
        path(&tv),
        "--right",
        path(&mk),
        "--mu",
        path(&mu),
        path(&nu),
        "--nu",
        path(&nu),
        path(&mu),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out);
    assert!((claim(&r, "primal") - claim(&r, "dual")).abs() <= 1e-5);
}

#[test]
fn tolerance_from_env_and_flag() {
    let (cost, mu, nu) = (fixture("cost.json"), fixture("mu.json"), fixture("nu.json"));
    let args = ["eval", "--transfer", "mk", "--cost", path(&cost), "--mu", path(&mu), "--nu", path(&nu)];
    let run = |env: Option<&str>, extra: &[&str]| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_transfer"));
        c.args(args).args(extra).env_remove("TRANSFER_TOL");
        if let Some(v) = env {
            c.env("TRANSFER_TOL", v);
        }
        c.output().unwrap()
    };
    assert_eq!(report(&run(None, &[])).claims[0].tol, 1e-8);
    assert_eq!(report(&run(Some("1e-6"), &[])).claims[0].tol, 1e-6);
    assert_eq!(report(&run(Some("1e-6"), &["--tol", "1e-4"])).claims[0].tol, 1e-4);
    assert_eq!(run(Some("soon"), &[]).status.code(), Some(2));
    assert_eq!(run(None, &["--tol", "-1"]).status.code(), Some(2));
}

#[test]
fn out_flag_and_csv_refusal() {
    let dir = tempfile::tempdir().unwrap();
    let dest = dir.path().join("r.json");
    let mk = fixture("transfers/mk.json");
    let out = transfer(&["barrier", "--transfer", path(&mk), "--out", path(&dest)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let r = Report::validate_json(&std::fs::read_to_string(&dest).unwrap()).unwrap();
    assert_eq!(r.verb, "barrier");

    let out = transfer(&["mather", "--transfer", path(&mk), "--format", "csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for p in [&a, &b] {
        let out = transfer(&["verify", "--level", "fast", "--seed", "5", "--out", path(p)]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn corrupted_catalog_descriptor_fails_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["tv.json", "kr.json"] {
        std::fs::copy(fixture("transfers").join(name), dir.path().join(name)).unwrap();
    }
    std::fs::write(dir.path().join("zz.json"), r#"{"kind": "tv", "space": {"id": "X", "points": ["a", "a"]}}"#).unwrap();
    let out = transfer(&["verify", "--catalog", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let r = report(&out);
    assert_eq!(r.values["passed"], Value::Bool(false));
    let why = r.witnesses["counterexamples"][0].as_str().unwrap();
    assert!(why.contains("zz.json") && why.contains("space"), "{why}");
}

#[test]
fn fixture_catalog_builds() {
    let out = transfer(&["verify", "--catalog", path(&fixture("transfers"))]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r.values["passed"], Value::Bool(true));
}
