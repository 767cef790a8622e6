//! The verbs of the command-line front end, as library calls.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::{
    digest, parse_value, read_json, read_text, suite, to_value, ConvexDesc, Format, InequalityFile, Method, Report, RunConfig,
    TransferDesc,
};
use crate::algebra::{convolve_chain, product_measure, tensor};
use crate::catalog::{backward_dual, forward_dual, TransferHandle};
use crate::entropic::{convex_dual, log_entropy};
use crate::error::{Error, Result};
use crate::inequality::{check_te_inequality, SearchPath};
use crate::kam::{aubry_mather, effective_constant, peierls_barrier, trace_csv, weak_kam, BarrierRoute, KamConfig};
use crate::measure::ProbMeasure;
use crate::solvers::ascent::AscentConfig;

/// A transfer given either as a descriptor file or as a kind name with its
/// parameters in separate files.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransferArg {
    pub spec: String,
    pub cost: Option<PathBuf>,
    pub space: Option<PathBuf>,
    /// JSON object with the remaining descriptor fields.
    pub params: Option<PathBuf>,
}

impl TransferArg {
    pub fn file(path: impl Into<PathBuf>) -> Self {
        TransferArg { spec: path.into().to_string_lossy().into_owned(), ..Default::default() }
    }

    fn resolve(&self, inputs: &mut Vec<(String, Vec<u8>)>) -> Result<TransferDesc> {
        let as_path = Path::new(&self.spec);
        if self.spec.ends_with(".json") || as_path.is_file() {
            let text = read_text(as_path)?;
            inputs.push((self.spec.clone(), text.clone().into_bytes()));
            return read_json(as_path);
        }
        let mut obj = match &self.params {
            Some(p) => {
                let text = read_text(p)?;
                inputs.push((p.to_string_lossy().into_owned(), text.clone().into_bytes()));
                match read_json::<Value>(p)? {
                    Value::Object(m) => m,
                    _ => return Err(Error::Schema { path: format!("{}:.", p.display()), message: "expected an object".into() }),
                }
            }
            None => serde_json::Map::new(),
        };
        obj.insert("kind".into(), Value::String(self.spec.clone()));
        for (key, file) in [("cost", &self.cost), ("space", &self.space)] {
            if let Some(p) = file {
                let text = read_text(p)?;
                inputs.push((p.to_string_lossy().into_owned(), text.into_bytes()));
                obj.insert(key.into(), read_json::<Value>(p)?);
            }
        }
        inputs.push(("kind".into(), self.spec.clone().into_bytes()));
        parse_value(Value::Object(obj))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Eval {
        transfer: TransferArg,
        mu: PathBuf,
        nu: PathBuf,
    },
    DualGap {
        transfer: TransferArg,
        mu: PathBuf,
        nu: PathBuf,
    },
    Convolve {
        parts: Vec<TransferArg>,
        mu: PathBuf,
        nu: PathBuf,
    },
    /// Each of `mu`, `nu` is one file on the product space or two factor
    /// files.
    Tensor {
        left: TransferArg,
        right: TransferArg,
        mu: Vec<PathBuf>,
        nu: Vec<PathBuf>,
    },
    Ineq {
        spec: PathBuf,
    },
    Kam {
        transfer: TransferArg,
        base_point: Option<String>,
    },
    Mather {
        transfer: TransferArg,
    },
    Barrier {
        transfer: TransferArg,
    },
    Entropy {
        entropy: PathBuf,
        mu: PathBuf,
        nu: PathBuf,
    },
    Verify {
        level: suite::SuiteLevel,
        catalog: Option<PathBuf>,
    },
}

impl Command {
    pub fn verb(&self) -> &'static str {
        match self {
            Command::Eval { .. } => "eval",
            Command::DualGap { .. } => "dual-gap",
            Command::Convolve { .. } => "convolve",
            Command::Tensor { .. } => "tensor",
            Command::Ineq { .. } => "ineq",
            Command::Kam { .. } => "kam",
            Command::Mather { .. } => "mather",
            Command::Barrier { .. } => "barrier",
            Command::Entropy { .. } => "entropy",
            Command::Verify { .. } => "verify",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub report: Report,
    /// Set when the requested format is CSV.
    pub csv: Option<String>,
    pub converged: bool,
    /// False when a verification failed.
    pub passed: bool,
}

impl Outcome {
    /// 0 on success, 3 on non-convergence, 1 on a failed verification.
    pub fn exit_code(&self) -> i32 {
        if !self.passed {
            1
        } else if !self.converged {
            3
        } else {
            0
        }
    }

    pub fn rendered(&self) -> String {
        self.csv.clone().unwrap_or_else(|| self.report.to_json())
    }
}

/// 2 for input errors, 3 for non-convergence, 1 otherwise.
pub fn error_exit_code(e: &Error) -> i32 {
    if e.is_input() {
        2
    } else if matches!(e, Error::NonConvergence { .. }) {
        3
    } else {
        1
    }
}

fn measure(path: &Path, inputs: &mut Vec<(String, Vec<u8>)>) -> Result<ProbMeasure> {
    let text = read_text(path)?;
    inputs.push((path.to_string_lossy().into_owned(), text.into_bytes()));
    read_json(path)
}

fn measure_pair(
    paths: &[PathBuf],
    space: &std::sync::Arc<crate::measure::FiniteSpace>,
    inputs: &mut Vec<(String, Vec<u8>)>,
) -> Result<ProbMeasure> {
    match paths {
        [one] => measure(one, inputs),
        [a, b] => {
            let (a, b) = (measure(a, inputs)?, measure(b, inputs)?);
            product_measure(space, &a, &b)
        }
        _ => Err(Error::input("expected one measure on the product space or two factor measures")),
    }
}

fn ascent(cfg: &RunConfig) -> AscentConfig {
    AscentConfig { seed: cfg.seed, tol: cfg.tol_for("ascent"), ..AscentConfig::default() }
}

fn kam_config(cfg: &RunConfig, base_point: Option<String>) -> KamConfig {
    KamConfig { tol: cfg.tol_for("kam").min(1e-10), seed: cfg.seed, base_point, ..KamConfig::default() }
}

/// How the primal value of a descriptor is computed.
fn primal_method(d: &TransferDesc) -> Method {
    match d {
        TransferDesc::Mk { .. } | TransferDesc::Kr { .. } | TransferDesc::Martingale { .. } | TransferDesc::Brenier { .. } => {
            Method::ExactLp
        }
        TransferDesc::Tv { .. } | TransferDesc::Trivial { .. } | TransferDesc::Pushforward { .. } => Method::ClosedForm,
        TransferDesc::Schrodinger { .. } => Method::Iteration,
        TransferDesc::Scaled { of, .. } | TransferDesc::Calibrated { of, .. } => primal_method(of),
        _ => Method::Ascent,
    }
}

fn dual_of(
    t: &TransferHandle,
    mu: &ProbMeasure,
    nu: &ProbMeasure,
    cfg: &RunConfig,
) -> Result<crate::solvers::ascent::AscentResult> {
    if t.direction().has_backward() {
        backward_dual(t.as_ref(), mu, nu, &ascent(cfg))
    } else {
        forward_dual(t.as_ref(), mu, nu, &ascent(cfg))
    }
}

fn no_csv(cfg: &RunConfig, verb: &str) -> Result<()> {
    if cfg.format == Format::Csv {
        return Err(Error::input(format!("csv output is available for kam and barrier, not {verb}")));
    }
    Ok(())
}

/// Runs one verb and assembles its report.
pub fn run(cmd: &Command, cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let verb = cmd.verb();
    let mut inputs: Vec<(String, Vec<u8>)> = Vec::new();
    let tol = cfg.tol;
    let done =
        |report: Report, csv: Option<String>, converged: bool, passed: bool| Ok(Outcome { report, csv, converged, passed });
    let finish = |inputs: &Vec<(String, Vec<u8>)>| {
        let parts: Vec<(&str, &[u8])> = inputs.iter().map(|(n, b)| (n.as_str(), b.as_slice())).collect();
        Report::new(verb, digest(&parts), cfg.seed)
    };
    match cmd {
        Command::Eval { transfer, mu, nu } => {
            no_csv(cfg, verb)?;
            let desc = transfer.resolve(&mut inputs)?;
            let (mu, nu) = (measure(mu, &mut inputs)?, measure(nu, &mut inputs)?);
            let t = desc.build()?;
            let value = t.eval(&mu, &nu)?;
            let mut r = finish(&inputs);
            r.claim("primal", value, tol, primal_method(&desc));
            r.values = json!({ "transfer": t.name(), "primal": value });
            r.provenance = json!({ "kind": desc.kind() });
            done(r, None, true, true)
        }
        Command::DualGap { transfer, mu, nu } => {
            no_csv(cfg, verb)?;
            let desc = transfer.resolve(&mut inputs)?;
            let (mu, nu) = (measure(mu, &mut inputs)?, measure(nu, &mut inputs)?);
            let t = desc.build()?;
            let primal = t.eval(&mu, &nu)?;
            let dual = dual_of(&t, &mu, &nu, cfg)?;
            let gap = primal - dual.value;
            let mut r = finish(&inputs);
            r.claim("primal", primal, tol, primal_method(&desc));
            r.claim("dual", dual.value, dual.gap().max(ascent(cfg).tol), Method::Ascent);
            r.claim("gap", gap, tol.max(dual.gap()), Method::Ascent);
            r.values = json!({ "transfer": t.name(), "primal": primal, "dual": dual.value, "gap": gap, "dual_upper_bound": dual.upper_bound });
            r.witnesses = json!({ "potential": dual.point });
            r.provenance = json!({ "kind": desc.kind(), "iterations": dual.iterations, "stationarity": dual.stationarity, "ascent": to_value(&ascent(cfg)) });
            let converged = primal.is_finite() && (dual.converged || gap.abs() <= tol.max(1e-6));
            done(r, None, converged, true)
        }
        Command::Convolve { parts, mu, nu } => {
            no_csv(cfg, verb)?;
            let descs = parts.iter().map(|p| p.resolve(&mut inputs)).collect::<Result<Vec<_>>>()?;
            let (mu, nu) = (measure(mu, &mut inputs)?, measure(nu, &mut inputs)?);
            let built = descs.iter().map(|d| d.build()).collect::<Result<Vec<_>>>()?;
            let chain = convolve_chain(built)?;
            let primal = chain.primal(&mu, &nu)?;
            let dual = backward_dual(chain.as_ref(), &mu, &nu, &ascent(cfg))?;
            let exact = chain.exact_mk(&mu, &nu)?;
            let gap = primal.value - dual.value;
            let mut r = finish(&inputs);
            r.claim("primal", primal.value, (primal.value - primal.lower_bound).max(0.0), Method::Ascent);
            r.claim("dual", dual.value, dual.gap().max(ascent(cfg).tol), Method::Ascent);
            if let Some(v) = exact {
                r.claim("min_plus_mk", v, 1e-9, Method::ExactLp);
            }
            r.values = json!({ "primal": primal.value, "primal_lower_bound": primal.lower_bound, "dual": dual.value, "gap": gap, "min_plus_mk": exact });
            r.witnesses = json!({ "intermediates": primal.intermediates.iter().map(|m| m.weights().to_vec()).collect::<Vec<_>>(), "potential": dual.point });
            r.provenance = json!({ "parts": descs.iter().map(|d| d.kind()).collect::<Vec<_>>(), "primal_iterations": primal.iterations, "dual_iterations": dual.iterations });
            done(r, None, gap.abs() <= 1e-5_f64.max(tol), true)
        }
        Command::Tensor { left, right, mu, nu } => {
            no_csv(cfg, verb)?;
            let (l, rr) = (left.resolve(&mut inputs)?, right.resolve(&mut inputs)?);
            let t = tensor(l.build()?, rr.build()?)?;
            let mu = measure_pair(mu, t.source(), &mut inputs)?;
            let nu = measure_pair(nu, t.target(), &mut inputs)?;
            let primal = t.eval(&mu, &nu)?;
            let dual = backward_dual(t.as_ref(), &mu, &nu, &ascent(cfg))?;
            let gap = primal - dual.value;
            let mut r = finish(&inputs);
            r.claim("primal", primal, tol, Method::Ascent);
            r.claim("dual", dual.value, dual.gap().max(ascent(cfg).tol), Method::Ascent);
            r.values = json!({ "primal": primal, "dual": dual.value, "gap": gap });
            r.witnesses = json!({ "potential": dual.point, "points": t.target().points() });
            r.provenance = json!({ "left": l.kind(), "right": rr.kind(), "iterations": dual.iterations });
            done(r, None, gap.abs() <= 1e-5_f64.max(tol), true)
        }
        Command::Ineq { spec } => {
            no_csv(cfg, verb)?;
            let text = read_text(spec)?;
            inputs.push((spec.to_string_lossy().into_owned(), text.into_bytes()));
            let file: InequalityFile = read_json(spec)?;
            let s = file.build(cfg.seed, cfg.tolerances.get("ineq").copied())?;
            let g = check_te_inequality(&s)?;
            let mut r = finish(&inputs);
            let m = if g.path == SearchPath::Grid { Method::Grid } else { Method::Ascent };
            r.claim("primal_gap", g.primal_gap, g.grid_h.unwrap_or(g.tol), m);
            r.claim("dual_value", g.dual_value, g.tol, Method::Ascent);
            r.values = json!({ "status": g.status, "primal_gap": g.primal_gap, "dual_gap": g.dual_gap, "dual_value": g.dual_value, "sign_consistent": g.sign_consistent });
            r.witnesses = json!({ "sigma": g.sigma_witness, "g": g.g_witness, "index": g.index_witness });
            r.provenance = to_value(&g);
            done(r, None, g.sign_consistent, true)
        }
        Command::Kam { transfer, base_point } => {
            let desc = transfer.resolve(&mut inputs)?;
            let t = desc.build()?;
            let kc = kam_config(cfg, base_point.clone());
            let est = effective_constant(t.as_ref(), &kc)?;
            let (res, _) = weak_kam(t, &kc)?;
            let mut r = finish(&inputs);
            let ell_method = if est.exact.is_some() { Method::MinPlus } else { Method::Iteration };
            r.claim("ell", res.ell, if est.exact.is_some() { 1e-12 } else { (est.upper - est.lower).max(kc.tol) }, ell_method);
            r.claim("residual", res.residual, kc.tol, Method::Iteration);
            r.claim("c_bound", res.c_bound, 0.0, Method::Iteration);
            r.values = json!({
                "ell": res.ell,
                "ell_orbit": est.ell,
                "ell_lower": est.lower,
                "ell_upper": est.upper,
                "karp": est.exact.as_ref().map(|e| e.karp),
                "stationary_lp": est.exact.as_ref().map(|e| e.stationary_lp),
                "u": res.u.values(),
                "residual": res.residual,
                "c_bound": res.c_bound,
            });
            r.witnesses = json!({ "points": res.u.space().points(), "cycle": est.exact.as_ref().map(|e| e.cycle.clone()) });
            r.provenance =
                json!({ "stage": res.stage, "iterations": res.iterations, "period": res.period, "config": to_value(&kc) });
            let csv = (cfg.format == Format::Csv).then(|| trace_csv(&res.trace));
            done(r, csv, res.converged, true)
        }
        Command::Barrier { transfer } | Command::Mather { transfer } => {
            let desc = transfer.resolve(&mut inputs)?;
            let t = desc.build()?;
            let kc = kam_config(cfg, None);
            let est = effective_constant(t.as_ref(), &kc)?;
            let ell = est.exact.as_ref().map_or(est.ell, |e| e.karp);
            let b = peierls_barrier(t.clone(), ell, &kc)?;
            let mut r = finish(&inputs);
            let bm = if b.route == BarrierRoute::MinPlus { Method::MinPlus } else { Method::LowerBound };
            r.claim(
                "ell",
                ell,
                if est.exact.is_some() { 1e-12 } else { (est.upper - est.lower).max(kc.tol) },
                if est.exact.is_some() { Method::MinPlus } else { Method::Iteration },
            );
            r.claim("idempotence_defect", b.idempotence_defect, 1e-8, bm);
            let converged = b.converged || b.route == BarrierRoute::LowerBound;
            if let Command::Barrier { .. } = cmd {
                r.values = json!({ "ell": ell, "h": b.h.to_rows(), "period": b.period });
                r.witnesses = json!({ "points": t.source().points() });
                r.provenance = to_value(&b);
                let csv = (cfg.format == Format::Csv).then(|| {
                    let mut s = String::from("x,y,h\n");
                    let pts = t.source().points();
                    for x in 0..pts.len() {
                        for y in 0..pts.len() {
                            s.push_str(&format!("{},{},{:e}\n", pts[x], pts[y], b.h.get(x, y) + 0.0));
                        }
                    }
                    s
                });
                return done(r, csv, converged, true);
            }
            no_csv(cfg, verb)?;
            let a = aubry_mather(t, ell, &b, 1e-9)?;
            r.claim("mather_value", a.mather_value, 1e-8, Method::ExactLp);
            r.claim("mather_value_uncalibrated", a.mather_value_uncalibrated, 1e-8, Method::ExactLp);
            r.claim("factorization_defect", a.factorization_defect, 1e-6, bm);
            r.values = json!({
                "ell": ell,
                "aubry_points": a.aubry_points,
                "mather_value": a.mather_value,
                "mather_value_uncalibrated": a.mather_value_uncalibrated,
                "mather_marginal": a.mather_marginal,
            });
            r.witnesses =
                json!({ "mather_coupling": a.mather_coupling.to_rows(), "aubry_measures": to_value(&a.aubry_measures) });
            r.provenance = json!({ "barrier": to_value(&b), "aubry": to_value(&a) });
            done(r, None, converged, true)
        }
        Command::Entropy { entropy, mu, nu } => {
            no_csv(cfg, verb)?;
            let text = read_text(entropy)?;
            inputs.push((entropy.to_string_lossy().into_owned(), text.into_bytes()));
            let desc: ConvexDesc = read_json(entropy)?;
            let (mu, nu) = (measure(mu, &mut inputs)?, measure(nu, &mut inputs)?);
            let e = desc.build()?;
            let primal = e.eval(&mu, &nu)?;
            let dual = convex_dual(e.as_ref(), &mu, &nu, &ascent(cfg))?;
            let mut r = finish(&inputs);
            r.claim("primal", primal, 0.0, Method::ClosedForm);
            r.claim("dual", dual.value, dual.gap().max(ascent(cfg).tol), Method::Ascent);
            let mut witness = json!({ "potential": dual.point });
            if let ConvexDesc::LogEntropy { .. } = desc {
                let le = log_entropy(mu.space().clone());
                if let Ok(w) = le.witness(&mu, &nu) {
                    let v = le.dual_objective(&mu, &nu, &w);
                    r.claim("dual_at_witness", v, 1e-12, Method::ClosedForm);
                    witness = json!({ "potential": dual.point, "closed_form": w });
                }
            }
            r.values = json!({ "entropy": e.name(), "primal": primal, "dual": dual.value, "gap": primal - dual.value });
            r.witnesses = witness;
            r.provenance = json!({ "iterations": dual.iterations, "ascent": to_value(&ascent(cfg)) });
            // an infinite primal leaves the ascent climbing with nothing to certify
            let converged = primal.is_finite() && (dual.converged || (primal - dual.value).abs() <= 1e-5);
            done(r, None, converged, true)
        }
        Command::Verify { level, catalog } => {
            no_csv(cfg, verb)?;
            let s = suite::verify_suite(*level, cfg.seed, catalog.as_deref())?;
            inputs.push(("level".into(), format!("{level:?}").into_bytes()));
            let mut r = finish(&inputs);
            for c in &s.checks {
                r.claim(&c.name, c.worst, c.tol, c.method);
            }
            let passed = s.passed;
            r.values = json!({ "passed": passed, "checks": s.checks.iter().map(|c| json!({ "name": c.name, "passed": c.passed })).collect::<Vec<_>>() });
            r.witnesses =
                json!({ "counterexamples": s.checks.iter().filter_map(|c| c.counterexample.clone()).collect::<Vec<_>>() });
            r.provenance = to_value(&s);
            done(r, None, true, passed)
        }
    }
}
