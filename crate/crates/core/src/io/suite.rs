//! Seeded invariant batteries over every module. Reports carry no timings,
//! so a fixed seed gives byte-identical output.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{read_json, Method, TransferDesc};
use crate::algebra::{check_order_relations, convolve};
use crate::catalog::{
    barycentric_transfer, brenier_transfer, check_backward_axioms, convex_order, kr_transfer, martingale_transfer,
    marton_transfer, mk_transfer, pushforward_transfer, schrodinger_transfer, trivial_transfer, tv_transfer, MarkovKernelModel,
    MartonParams, TransferHandle,
};
use crate::entropic::log_entropy;
use crate::error::{Error, Result};
use crate::inequality::{back_back_dual, Lhs, SearchSettings};
use crate::kam::{aubry_mather, effective_constant, peierls_barrier, weak_kam, KamConfig};
use crate::measure::{kl_raw, CostMatrix, FiniteSpace, PointMap, Potential, ProbMeasure};
use crate::par::{map_range, Execution};
use crate::rng;
use crate::scalar::ScalarFn;
use crate::solvers::transport::solve_transport_lp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteLevel {
    Fast,
    Full,
}

impl SuiteLevel {
    fn pick(self, fast: usize, full: usize) -> usize {
        match self {
            SuiteLevel::Fast => fast,
            SuiteLevel::Full => full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub instances: usize,
    /// Largest violation (or discrepancy) seen.
    #[serde(with = "super::extended_f64")]
    pub worst: f64,
    pub tol: f64,
    pub method: Method,
    pub counterexample: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub level: SuiteLevel,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

/// One result per named criterion from a batch of instances, each
/// instance giving a value per criterion.
fn gather_many(criteria: &[(&str, f64)], method: Method, results: &[Result<(Vec<f64>, String)>]) -> Vec<CheckResult> {
    criteria
        .iter()
        .enumerate()
        .map(|(i, (name, tol))| {
            let mut worst: f64 = 0.0;
            let mut counterexample = None;
            for r in results {
                match r {
                    Ok((vals, what)) => {
                        let w = vals[i];
                        if !(w <= *tol) && counterexample.is_none() {
                            counterexample = Some(format!("{what}: {w:e}"));
                        }
                        worst = if w.is_nan() { f64::INFINITY } else { worst.max(w) };
                    }
                    Err(e) => {
                        worst = f64::INFINITY;
                        if counterexample.is_none() {
                            counterexample = Some(e.to_string());
                        }
                    }
                }
            }
            CheckResult {
                name: name.to_string(),
                passed: counterexample.is_none(),
                instances: results.len(),
                worst,
                tol: *tol,
                method,
                counterexample,
            }
        })
        .collect()
}

fn gather(name: &str, tol: f64, method: Method, results: Vec<Result<(f64, String)>>) -> CheckResult {
    let results: Vec<_> = results.into_iter().map(|r| r.map(|(w, what)| (vec![w], what))).collect();
    gather_many(&[(name, tol)], method, &results).remove(0)
}

fn indexed(id: &str, n: usize) -> Arc<FiniteSpace> {
    Arc::new(FiniteSpace::indexed(id, n).expect("n >= 1"))
}

fn random_cost(r: &mut impl Rng, a: &Arc<FiniteSpace>, b: &Arc<FiniteSpace>, hi: f64) -> CostMatrix {
    let rows = (0..a.len()).map(|_| rng::uniform_vec(r, b.len(), 0.0, hi)).collect();
    CostMatrix::from_rows(a.clone(), b.clone(), rows).expect("shapes match")
}

fn random_measure(r: &mut impl Rng, s: &Arc<FiniteSpace>, zero_prob: f64) -> ProbMeasure {
    ProbMeasure::from_unnormalized(s.clone(), rng::sparse_simplex_point(r, s.len(), zero_prob)).expect("nonzero weights")
}

fn lp_duality(level: SuiteLevel, seed: u64) -> Vec<CheckResult> {
    let n = level.pick(40, 200);
    let results = map_range(Execution::Parallel, n, |k| {
        let mut r = rng::stream(seed, 1000 + k as u64);
        let (a, b) = (indexed("A", r.gen_range(2..=8)), indexed("B", r.gen_range(2..=8)));
        let c = random_cost(&mut r, &a, &b, 10.0);
        let (mu, nu) = (random_measure(&mut r, &a, 0.2), random_measure(&mut r, &b, 0.2));
        let lp = solve_transport_lp(&c, &mu, &nu)?;
        let (phi, psi) = (&lp.dual_potentials.0, &lp.dual_potentials.1);
        let dual = nu.integrate(psi.values()) - mu.integrate(phi.values());
        let (mut infeasible, mut slack_on_support): (f64, f64) = (0.0, 0.0);
        for x in 0..a.len() {
            for y in 0..b.len() {
                let slack = c.get(x, y) - (psi.values()[y] - phi.values()[x]);
                infeasible = infeasible.max(-slack);
                if lp.coupling.get(x, y) > 1e-10 {
                    slack_on_support = slack_on_support.max(slack.abs());
                }
            }
        }
        Ok((vec![(lp.value - dual).abs(), slack_on_support, infeasible], format!("instance {k}")))
    });
    gather_many(
        &[("lp_duality_gap", 1e-9), ("lp_complementary_slackness", 1e-8), ("lp_dual_feasibility", 1e-9)],
        Method::ExactLp,
        &results,
    )
}

/// One instance of every catalog transfer with a backward operator.
pub(crate) fn catalog_instances(seed: u64) -> Result<Vec<TransferHandle>> {
    let mut r = rng::stream(seed, 2000);
    let s = indexed("X", 4);
    let grid = Arc::new(FiniteSpace::grid("G", vec![0.0, 0.5, 1.7, 3.0])?);
    let xs = grid.coords().expect("grid").to_vec();
    let dist = CostMatrix::from_fn(s.clone(), s.clone(), |x, y| (xs[x] - xs[y]).abs())?;
    let quad = CostMatrix::from_fn(grid.clone(), grid.clone(), |x, y| (xs[x] - xs[y]).powi(2))?;
    let w = vec![vec![1.0, 0.5, 0.2, 0.0], vec![0.5, 2.0, 0.3, 0.1], vec![0.2, 0.3, 0.7, 0.4], vec![0.0, 0.1, 0.4, 1.0]];
    Ok(vec![
        mk_transfer(random_cost(&mut r, &s, &s, 3.0)),
        tv_transfer(s.clone())?,
        kr_transfer(dist)?,
        brenier_transfer(grid.clone())?,
        martingale_transfer(quad)?,
        marton_transfer(MartonParams { gamma: ScalarFn::power(2.0), d: random_cost(&mut r, &s, &s, 2.0) })?,
        barycentric_transfer(grid)?,
        schrodinger_transfer(MarkovKernelModel::from_symmetric_weights(s.clone(), w)?)?,
        pushforward_transfer(PointMap::new(s.clone(), s.clone(), vec![2, 2, 0, 1])?),
        trivial_transfer(
            Potential::new(s.clone(), rng::uniform_vec(&mut r, 4, -1.0, 1.0))?,
            Potential::new(s.clone(), rng::uniform_vec(&mut r, 4, -1.0, 1.0))?,
        ),
    ])
}

fn operator_axioms(level: SuiteLevel, seed: u64) -> CheckResult {
    let samples = level.pick(20, 100);
    let results = match catalog_instances(seed) {
        Ok(ts) => map_range(Execution::Parallel, ts.len(), |k| {
            let rep = check_backward_axioms(ts[k].as_ref(), samples, seed + k as u64, 1e-10)?;
            Ok((if rep.passed() { rep.worst.min(1e-10) } else { rep.worst }, ts[k].name()))
        }),
        Err(e) => vec![Err(e)],
    };
    gather("operator_axioms", 1e-10, Method::ClosedForm, results)
}

fn convolution(level: SuiteLevel, seed: u64) -> CheckResult {
    let n = level.pick(5, 30);
    let results = map_range(Execution::Parallel, n, |k| {
        let mut r = rng::stream(seed, 3000 + k as u64);
        let (a, b, c) = (indexed("A", r.gen_range(2..=4)), indexed("B", r.gen_range(2..=4)), indexed("C", r.gen_range(2..=4)));
        let conv = convolve(mk_transfer(random_cost(&mut r, &a, &b, 3.0)), mk_transfer(random_cost(&mut r, &b, &c, 3.0)))?;
        let (mu, nu) = (random_measure(&mut r, &a, 0.0), random_measure(&mut r, &c, 0.0));
        let exact = conv.exact_mk(&mu, &nu)?.ok_or_else(|| Error::Consistency("MK chain without a cost".into()))?;
        let p = conv.primal(&mu, &nu)?;
        Ok(((p.value - exact).abs(), format!("triple {k}")))
    });
    gather("convolution_min_plus", 1e-8, Method::ExactLp, results)
}

fn order_relations(level: SuiteLevel, seed: u64) -> CheckResult {
    let samples = level.pick(20, 100);
    let results = match catalog_instances(seed) {
        // MK, TV, KR and trivial
        Ok(ts) => [0usize, 1, 2, 9]
            .iter()
            .map(|&k| {
                let rep = check_order_relations(ts[k].as_ref(), samples, seed + 50 + k as u64, 1e-10)?;
                Ok((if rep.passed() { rep.worst.min(1e-10) } else { rep.worst }, ts[k].name()))
            })
            .collect(),
        Err(e) => vec![Err(e)],
    };
    gather("order_relations", 1e-10, Method::ClosedForm, results)
}

fn strassen(level: SuiteLevel, seed: u64) -> CheckResult {
    let n = level.pick(50, 200);
    let results = map_range(Execution::Parallel, n, |k| {
        let mut r = rng::stream(seed, 4000 + k as u64);
        let m = r.gen_range(2..=6);
        let mut xs: Vec<f64> = (0..m).map(|_| r.gen_range(-3.0..3.0)).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let g = Arc::new(FiniteSpace::grid("G", xs.clone())?);
        let c = CostMatrix::from_fn(g.clone(), g.clone(), |x, y| (xs[x] - xs[y]).powi(2))?;
        let t = martingale_transfer(c)?;
        let mu = random_measure(&mut r, &g, 0.3);
        let nu = if k % 2 == 0 {
            // spread each atom to a pair around it
            let mut w = vec![0.0; xs.len()];
            for x in mu.support() {
                let (lo, hi) = (r.gen_range(0..=x), r.gen_range(x..xs.len()));
                if lo == hi {
                    w[x] += mu.weights()[x];
                } else {
                    let s = (xs[hi] - xs[x]) / (xs[hi] - xs[lo]);
                    w[lo] += mu.weights()[x] * s;
                    w[hi] += mu.weights()[x] * (1.0 - s);
                }
            }
            ProbMeasure::from_unnormalized(g.clone(), w)?
        } else {
            random_measure(&mut r, &g, 0.0)
        };
        let feasible = t.eval(&mu, &nu)?.is_finite();
        let ordered = convex_order(&mu, &nu, 1e-9)?;
        Ok((if feasible == ordered { 0.0 } else { 1.0 }, format!("pair {k}")))
    });
    gather("strassen", 0.0, Method::ExactLp, results)
}

fn kl_witness(level: SuiteLevel, seed: u64) -> CheckResult {
    let n = level.pick(20, 100);
    let results = (0..n)
        .map(|k| {
            let mut r = rng::stream(seed, 5000 + k as u64);
            let s = indexed("X", r.gen_range(2..=6));
            let mu = random_measure(&mut r, &s, 0.0);
            let nu = random_measure(&mut r, &s, 0.3);
            let e = log_entropy(s);
            let w = e.witness(&mu, &nu)?;
            let kl = kl_raw(nu.weights(), mu.weights());
            Ok(((e.dual_objective(&mu, &nu, &w) - kl).abs(), format!("pair {k}")))
        })
        .collect();
    gather("kl_witness", 1e-12, Method::ClosedForm, results)
}

fn inequality_signs(level: SuiteLevel, seed: u64) -> CheckResult {
    let n = level.pick(2, 8);
    let results = (0..n)
        .map(|k| {
            let mut r = rng::stream(seed, 6000 + k as u64);
            let s = indexed("X", 2);
            let lambda = [0.2, 0.5, 1.0, 3.0][k % 4];
            let first = crate::entropic::scale_convex(lambda, log_entropy(s.clone()))?;
            let second = Lhs::Linear(mk_transfer(random_cost(&mut r, &s, &s, 2.0)));
            let (mu, nu) = (random_measure(&mut r, &s, 0.0), random_measure(&mut r, &s, 0.0));
            let settings = SearchSettings { seed, ..SearchSettings::default() };
            let v = back_back_dual(first.as_ref(), &second, &mu, &nu, &settings)?;
            let agree = (v.primal.value >= -settings.tol) == (v.dual.value >= -settings.tol);
            let w = if agree { v.discrepancy() } else { f64::INFINITY };
            Ok((w, format!("instance {k}")))
        })
        .collect();
    gather("inequality_signs", 2e-3, Method::Grid, results)
}

fn weak_kam_agreement(level: SuiteLevel, seed: u64) -> Vec<CheckResult> {
    let n = level.pick(15, 100);
    let results = map_range(Execution::Parallel, n, |k| {
        let mut r = rng::stream(seed, 7000 + k as u64);
        let s = indexed("X", r.gen_range(2..=8));
        let t = mk_transfer(random_cost(&mut r, &s, &s, 10.0));
        let cfg = KamConfig::default();
        let est = effective_constant(t.as_ref(), &cfg)?;
        let exact = est.exact.clone().ok_or_else(|| Error::Consistency("MK without exact ℓ".into()))?;
        let (res, _) = weak_kam(t, &cfg)?;
        let spread = (est.ell - exact.karp).abs().max((exact.stationary_lp - exact.karp).abs());
        Ok((vec![spread, res.residual], format!("instance {k}")))
    });
    gather_many(&[("ell_three_routes", 1e-8), ("weak_kam_residual", 1e-10)], Method::MinPlus, &results)
}

fn barrier(level: SuiteLevel, seed: u64) -> Vec<CheckResult> {
    let n = level.pick(10, 50);
    let results = map_range(Execution::Parallel, n, |k| {
        let mut r = rng::stream(seed, 8000 + k as u64);
        let s = indexed("X", r.gen_range(2..=6));
        let t = mk_transfer(random_cost(&mut r, &s, &s, 10.0));
        let cfg = KamConfig::default();
        let ell = effective_constant(t.as_ref(), &cfg)?.exact.map(|e| e.karp).unwrap_or(f64::NAN);
        let b = peierls_barrier(t.clone(), ell, &cfg)?;
        let a = aubry_mather(t, ell, &b, 1e-9)?;
        let empty = if a.aubry_indices.is_empty() || !b.converged { 1.0 } else { 0.0 };
        Ok((vec![b.idempotence_defect, empty, (-a.min_diagonal).max(0.0), a.factorization_defect], format!("instance {k}")))
    });
    gather_many(
        &[("barrier_idempotence", 1e-8), ("aubry_nonempty", 0.0), ("barrier_diagonal", 1e-10), ("aubry_factorization", 1e-6)],
        Method::MinPlus,
        &results,
    )
}

fn descriptors(dir: &Path) -> CheckResult {
    let mut files: Vec<_> = match std::fs::read_dir(dir) {
        Ok(it) => it.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "json")).collect(),
        Err(e) => {
            return gather("descriptors", 0.0, Method::ClosedForm, vec![Err(Error::input(format!("{}: {e}", dir.display())))])
        }
    };
    files.sort();
    let results = files
        .iter()
        .map(|p| {
            let d: TransferDesc = read_json(p)?;
            d.build().map_err(|e| Error::input(format!("{}: {e}", p.display())))?;
            Ok((0.0, p.display().to_string()))
        })
        .collect();
    gather("descriptors", 0.0, Method::ClosedForm, results)
}

/// Runs every battery at the given level; with `catalog`, also parses and
/// builds every descriptor file in that directory.
pub fn verify_suite(level: SuiteLevel, seed: u64, catalog: Option<&Path>) -> Result<SuiteReport> {
    let mut checks = lp_duality(level, seed);
    checks.extend([
        operator_axioms(level, seed),
        convolution(level, seed),
        order_relations(level, seed),
        strassen(level, seed),
        kl_witness(level, seed),
        inequality_signs(level, seed),
    ]);
    checks.extend(weak_kam_agreement(level, seed));
    checks.extend(barrier(level, seed));
    if let Some(dir) = catalog {
        checks.push(descriptors(dir));
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(SuiteReport { level, seed, checks, passed })
}
