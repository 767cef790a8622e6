use std::path::PathBuf;
use std::sync::Arc;

use super::*;
use crate::measure::{CostMatrix, FiniteSpace, ProbMeasure};
use crate::solvers::transport::solve_transport_lp;

fn space(n: usize) -> Arc<FiniteSpace> {
    Arc::new(FiniteSpace::indexed("X", n).unwrap())
}

fn write<T: Serialize>(dir: &tempfile::TempDir, name: &str, v: &T) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, serde_json::to_string(v).unwrap()).unwrap();
    p
}

#[test]
fn descriptors_round_trip_and_build() {
    let s = space(3);
    let c =
        CostMatrix::from_rows(s.clone(), s.clone(), vec![vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 1.0], vec![2.0, 1.0, 0.0]]).unwrap();
    let descs = vec![
        TransferDesc::Mk { cost: c.clone() },
        TransferDesc::Tv { space: (*s).clone() },
        TransferDesc::Kr { cost: c.clone() },
        TransferDesc::Scaled { factor: 2.0, of: Box::new(TransferDesc::Mk { cost: c.clone() }) },
        TransferDesc::Convolution { parts: vec![TransferDesc::Mk { cost: c.clone() }, TransferDesc::Tv { space: (*s).clone() }] },
        TransferDesc::Calibrated { ell: 0.5, of: Box::new(TransferDesc::Mk { cost: c }) },
    ];
    for d in descs {
        let text = serde_json::to_string(&d).unwrap();
        let back: TransferDesc = parse_json(&text).unwrap();
        assert_eq!(back, d);
        let t = d.build().unwrap();
        assert_eq!(t.source().len(), 3, "{}", d.kind());
    }
}

#[test]
fn schema_errors_carry_the_json_path() {
    let text = r#"{"kind":"scaled","factor":2,"of":{"kind":"tv","space":{"id":"X","points":"oops"}}}"#;
    match parse_json::<TransferDesc>(text) {
        Err(Error::Schema { path, .. }) => assert_eq!(path, "of.space.points"),
        other => panic!("{other:?}"),
    }
    let text = r#"{"kind":"convolution","parts":[{"kind":"tv","space":{"id":"X","points":["a"]}},{"kind":"mk"}]}"#;
    match parse_json::<TransferDesc>(text) {
        Err(Error::Schema { path, message }) => {
            assert_eq!(path, "parts[1]");
            assert!(message.contains("cost"), "{message}");
        }
        other => panic!("{other:?}"),
    }
    match parse_json::<TransferDesc>(r#"{"kind":"warp"}"#) {
        Err(e @ Error::Schema { .. }) => {
            assert!(e.is_input());
            assert!(matches!(e, Error::Schema { ref path, .. } if path == "kind"), "{e:?}");
        }
        other => panic!("{other:?}"),
    }
    match parse_json::<InequalityFile>(
        r#"{"form":"maurey","lhs":{"linear":{"kind":"tv","space":{"id":"X","points":["a"]}}},"rhs":{"kind":"maurey","t1":{"kind":"tv","space":{"id":"X","points":["a"]}},"t2":{"kind":"tv","space":{"id":"X","points":[1]}},"lambda1":1,"lambda2":1},"mu":null,"nu":null}"#,
    ) {
        Err(Error::Schema { path, .. }) => assert_eq!(path, "rhs.t2.space.points[0]"),
        other => panic!("{other:?}"),
    }
    match parse_json::<TransferDesc>(r#"{"kind":"tv","space":{"id":"X","points":["a"]},"extra":1}"#) {
        Err(Error::Schema { .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn nonpositive_lambda_is_a_schema_error() {
    let s = space(2);
    let mu = ProbMeasure::uniform(s.clone());
    let file = |lambda: f64| InequalityFile {
        form: Form::BackwardBackward,
        lhs: LhsDesc::Linear(TransferDesc::Tv { space: (*s).clone() }),
        rhs: RhsDesc::Entropic { entropy: ConvexDesc::LogEntropy { space: (*s).clone() }, link: None, lambda },
        mu: mu.clone(),
        nu: mu.clone(),
        settings: None,
    };
    for bad in [-1.0, 0.0, f64::NAN] {
        match file(bad).validate() {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "rhs.lambda"),
            other => panic!("{other:?}"),
        }
    }
    assert!(file(0.5).validate().is_ok());
    let mut wrong = file(0.5);
    wrong.form = Form::Maurey;
    assert!(matches!(wrong.validate(), Err(Error::Schema { path, .. }) if path == "rhs.kind"));
}

#[test]
fn digest_is_length_prefixed_and_deterministic() {
    let a = digest(&[("a", b"bc".as_slice())]);
    assert_eq!(a, digest(&[("a", b"bc".as_slice())]));
    assert_ne!(a, digest(&[("ab", b"c".as_slice())]));
    assert_eq!(a.len(), 64);
}

#[test]
fn reports_round_trip_with_infinite_claims() {
    let mut r = Report::new("eval", digest(&[]), 7);
    r.claim("primal", f64::INFINITY, 1e-8, Method::ExactLp);
    r.claim("gap", 0.25, 1e-8, Method::Ascent);
    let back = Report::validate_json(&r.to_json()).unwrap();
    assert_eq!(back.claims[0].value, f64::INFINITY);
    assert_eq!(back.claims[1], r.claims[1]);
    let broken = r.to_json().replace(&r.inputs_digest, "xyz");
    assert!(matches!(Report::validate_json(&broken), Err(Error::Schema { path, .. }) if path == "inputs_digest"));
}

#[test]
fn run_config_tolerances() {
    let mut cfg = RunConfig::default();
    cfg.tolerances.insert("kam".into(), 1e-12);
    assert_eq!(cfg.tol_for("kam"), 1e-12);
    assert_eq!(cfg.tol_for("ascent"), 1e-8);
    cfg.tol = -1.0;
    assert!(cfg.validate().is_err());
}

#[test]
fn eval_matches_the_transport_lp() {
    let dir = tempfile::tempdir().unwrap();
    let s = space(3);
    let c =
        CostMatrix::from_rows(s.clone(), s.clone(), vec![vec![0.0, 3.0, 1.0], vec![2.0, 0.0, 4.0], vec![1.0, 1.0, 0.0]]).unwrap();
    let mu = ProbMeasure::new(s.clone(), vec![0.5, 0.5, 0.0]).unwrap();
    let nu = ProbMeasure::new(s.clone(), vec![0.0, 0.25, 0.75]).unwrap();
    let oracle = solve_transport_lp(&c, &mu, &nu).unwrap().value;
    let cost = write(&dir, "cost.json", &c);
    let (mp, np) = (write(&dir, "mu.json", &mu), write(&dir, "nu.json", &nu));
    let by_kind = TransferArg { spec: "mk".into(), cost: Some(cost), ..Default::default() };
    let out = run(&Command::Eval { transfer: by_kind, mu: mp.clone(), nu: np.clone() }, &RunConfig::default()).unwrap();
    assert_eq!(out.exit_code(), 0);
    let r = Report::validate_json(&out.rendered()).unwrap();
    assert!((r.claims[0].value - oracle).abs() < 1e-12);
    assert_eq!(r.claims[0].method, Method::ExactLp);

    let desc = write(&dir, "t.json", &TransferDesc::Mk { cost: c });
    let again =
        run(&Command::Eval { transfer: TransferArg::file(desc), mu: mp.clone(), nu: np.clone() }, &RunConfig::default()).unwrap();
    assert_eq!(again.report.claims[0].value, r.claims[0].value);

    let csv = RunConfig { format: Format::Csv, ..RunConfig::default() };
    let e = run(&Command::Eval { transfer: TransferArg::file(dir.path().join("t.json")), mu: mp, nu: np }, &csv).unwrap_err();
    assert_eq!(error_exit_code(&e), 2);
}

#[test]
fn kam_on_a_zero_cost() {
    let dir = tempfile::tempdir().unwrap();
    let s = space(3);
    let c = CostMatrix::from_fn(s.clone(), s.clone(), |_, _| 0.0).unwrap();
    let desc = write(&dir, "t.json", &TransferDesc::Mk { cost: c });
    let cmd = Command::Kam { transfer: TransferArg::file(&desc), base_point: None };
    let out = run(&cmd, &RunConfig::default()).unwrap();
    assert_eq!(out.exit_code(), 0);
    let ell = out.report.claims.iter().find(|c| c.name == "ell").unwrap().value;
    assert_eq!(ell, 0.0);
    let u: Vec<f64> = serde_json::from_value(out.report.values["u"].clone()).unwrap();
    assert!(u.iter().all(|v| v.abs() < 1e-12), "{u:?}");

    let csv = run(&cmd, &RunConfig { format: Format::Csv, ..RunConfig::default() }).unwrap();
    assert!(csv.rendered().starts_with("n,M_n,m_n,residual\n"));
    let a = run(&cmd, &RunConfig::default()).unwrap();
    assert_eq!(a.rendered(), out.rendered());
}

#[test]
fn missing_file_is_an_input_error() {
    let e = run(
        &Command::Eval {
            transfer: TransferArg::file("/nonexistent/t.json"),
            mu: "/nonexistent/mu.json".into(),
            nu: "nu.json".into(),
        },
        &RunConfig::default(),
    )
    .unwrap_err();
    assert_eq!(error_exit_code(&e), 2);
}

#[test]
fn suites_pass() {
    for (level, seed) in [(SuiteLevel::Fast, 0), (SuiteLevel::Full, 11)] {
        let r = verify_suite(level, seed, None).unwrap();
        for c in &r.checks {
            assert!(c.passed, "{} worst {:e} tol {:e}: {:?}", c.name, c.worst, c.tol, c.counterexample);
        }
    }
}
