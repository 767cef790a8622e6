//! Iterated self-convolution 𝓣ₙ = 𝓣⋆…⋆𝓣, the effective constant ℓ with
//! |𝓣ₙ − nℓ| ≤ C, fixed points of the calibrated Kantorovich operator (weak
//! KAM solutions), the barrier 𝓣∞ and the Aubry set.
//!
//! ℓ is read off the orbit uₙ = Tⁿ0. With Mₙ = −min uₙ and mₙ = −max uₙ,
//! Mₙ is subadditive and mₙ superadditive, so mₙ/n ≤ ℓ ≤ Mₙ/n at every n.
//! Once uₙ − u_{n−q} is a constant κ the same holds for all later n by
//! translation covariance, and ℓ = −κ/q exactly. For MK costs the orbit is
//! max-plus linear and always becomes periodic in this sense; Karp's
//! minimum mean cycle and the stationary LP give two more values of ℓ.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::catalog::{Direction, EvalGrad, OpValue, Transfer, TransferHandle};
use crate::error::{Error, Result};
use crate::measure::{check_space, is_forbidden, CostMatrix, Coupling, FiniteSpace, PointMap, Potential, ProbMeasure};
use crate::solvers::cycle::{min_mean_cycle, solve_stationary_lp};
use crate::solvers::minplus::minplus_compose;

mod barrier;

pub use barrier::{aubry_mather, barrier_operator, peierls_barrier, AubryReport, BarrierRoute, PeierlsBarrier};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KamConfig {
    pub max_iters: usize,
    pub tol: f64,
    /// Label where potentials are pinned to 0; the first point by default.
    pub base_point: Option<String>,
    /// Longest period searched for, and the window of the limsup stage.
    pub window: usize,
    pub seed: u64,
}

impl Default for KamConfig {
    fn default() -> Self {
        KamConfig { max_iters: 20_000, tol: 1e-10, base_point: None, window: 64, seed: 0 }
    }
}

impl KamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.window == 0 || self.max_iters == 0 {
            return Err(Error::input("kam config needs tol > 0, window >= 1 and max_iters >= 1"));
        }
        Ok(())
    }

    fn base_index(&self, space: &FiniteSpace) -> Result<usize> {
        match &self.base_point {
            Some(label) => space.index_of(label),
            None => Ok(0),
        }
    }
}

fn check_square(t: &dyn Transfer) -> Result<()> {
    check_space(t.source(), t.target())?;
    if !t.direction().has_backward() {
        return Err(Error::input(format!("{} has no backward operator", t.name())));
    }
    Ok(())
}

fn check_kam_domain(t: &dyn Transfer) -> Result<()> {
    check_square(t)?;
    if !t.dirac_domain() {
        return Err(Error::domain(format!(
            "{} takes the value +∞ between Dirac masses; weak KAM needs a finite transfer",
            t.name()
        )));
    }
    Ok(())
}

/// T⁻ applied n times.
pub fn iterate_operator(t: &dyn Transfer, g: &Potential, n: usize) -> Result<Potential> {
    check_square(t)?;
    check_space(t.target(), g.space())?;
    let mut u = g.values().to_vec();
    for _ in 0..n {
        u = t.backward(&u)?.values;
    }
    Potential::new(g.space().clone(), u)
}

fn spread(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(*x), hi.max(*x)))
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Tolerance for "uₙ − u_{n−q} is constant", relative to the orbit scale.
fn periodic_tol(scale: f64) -> f64 {
    1e-12 * (1.0 + scale)
}

/// One row of the orbit trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub n: usize,
    #[serde(rename = "M_n")]
    pub upper: f64,
    #[serde(rename = "m_n")]
    pub lower: f64,
    pub residual: f64,
}

/// CSV with the columns n, M_n, m_n, residual.
pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("n,M_n,m_n,residual\n");
    for r in rows {
        // + 0.0 turns −0 into 0
        out.push_str(&format!("{},{:e},{:e},{:e}\n", r.n, r.upper + 0.0, r.lower + 0.0, r.residual + 0.0));
    }
    out
}

/// Exact values of ℓ for MK costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactEll {
    pub karp: f64,
    pub cycle: Vec<String>,
    pub stationary_lp: f64,
    pub mather: Coupling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllEstimate {
    pub ell: f64,
    /// mₙ/n and Mₙ/n at the last iterate.
    pub lower: f64,
    pub upper: f64,
    /// Period of the orbit once it is affine, if detected.
    pub period: Option<usize>,
    /// Iteration at which the period was detected.
    pub transient: Option<usize>,
    pub iterations: usize,
    /// sup over the trace of Mₙ − mₙ.
    pub c_bound: f64,
    pub exact: Option<ExactEll>,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
}

/// ℓ from the orbit of 0, cross-checked against Karp and the stationary LP
/// for MK costs.
pub fn effective_constant(t: &dyn Transfer, cfg: &KamConfig) -> Result<EllEstimate> {
    cfg.validate()?;
    check_kam_domain(t)?;
    let n = t.source().len();
    let mut hist: Vec<Vec<f64>> = vec![vec![0.0; n]];
    let mut trace = Vec::new();
    let mut c_bound: f64 = 0.0;
    let mut found: Option<(usize, usize, f64)> = None;
    let mut confirm = 0;
    let mut k = 0;
    while k < cfg.max_iters {
        k += 1;
        let next = t.backward(hist.last().expect("nonempty"))?.values;
        let (lo, hi) = spread(&next);
        c_bound = c_bound.max(hi - lo);
        let residual = sup_dist(&next, hist.last().expect("nonempty"));
        trace.push(TraceRow { n: k, upper: -lo, lower: -hi, residual });
        hist.push(next);
        if hist.len() > cfg.window + 1 {
            hist.remove(0);
        }
        let last = hist.last().expect("nonempty");
        let scale = last.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        match found {
            // keep checking for `confirm` more steps before trusting it
            Some((q, _, kappa)) => {
                let d: Vec<f64> = last.iter().zip(&hist[hist.len() - 1 - q]).map(|(a, b)| a - b).collect();
                let (dl, dh) = spread(&d);
                if dh - dl > periodic_tol(scale) || (dl - kappa).abs() > periodic_tol(scale) {
                    found = None;
                } else {
                    confirm -= 1;
                    if confirm == 0 {
                        break;
                    }
                }
            }
            None => {
                for q in 1..hist.len() {
                    let d: Vec<f64> = last.iter().zip(&hist[hist.len() - 1 - q]).map(|(a, b)| a - b).collect();
                    let (dl, dh) = spread(&d);
                    if dh - dl <= periodic_tol(scale) {
                        found = Some((q, k, 0.5 * (dl + dh)));
                        confirm = 2 * q + 2;
                        break;
                    }
                }
            }
        }
    }
    let last = trace.last().expect("at least one iteration");
    let (lower, upper) = (last.lower / k as f64, last.upper / k as f64);
    let converged = found.is_some() && confirm == 0;
    let (ell, period, transient) = match found {
        Some((q, at, kappa)) if converged => (-kappa / q as f64, Some(q), Some(at)),
        _ => (0.5 * (lower + upper), None, None),
    };
    let exact = match t.mk_cost() {
        Some(c) => {
            let cyc = min_mean_cycle(c)?;
            let lp = solve_stationary_lp(c)?;
            Some(ExactEll { karp: cyc.mean, cycle: cyc.cycle, stationary_lp: lp.value, mather: lp.coupling })
        }
        None => None,
    };
    Ok(EllEstimate { ell, lower, upper, period, transient, iterations: k, c_bound, exact, trace, converged })
}

/// Sandwich sequences for an MK cost: Mₙ and mₙ are the largest and
/// smallest entries of the min-plus power cⁿ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sandwich {
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    /// max over n of Mₙ − mₙ.
    pub c_bound: f64,
    /// max over n and (x,y) of |cⁿ(x,y) − nℓ|.
    pub worst_deviation: f64,
    /// Largest violation of sub- and superadditivity.
    pub additivity_defect: f64,
}

pub fn lemma_sandwich(c: &CostMatrix, ell: f64, n_max: usize) -> Result<Sandwich> {
    if !c.is_square() || c.has_forbidden() {
        return Err(Error::domain("the sandwich needs a finite square cost"));
    }
    let mut power = c.clone();
    let (mut upper, mut lower) = (Vec::new(), Vec::new());
    let mut worst: f64 = 0.0;
    for n in 1..=n_max {
        if n > 1 {
            power = minplus_compose(c, &power)?;
        }
        let (lo, hi) = spread(power.entries());
        upper.push(hi);
        lower.push(lo);
        worst = worst.max((hi - n as f64 * ell).abs()).max((lo - n as f64 * ell).abs());
    }
    let mut defect: f64 = 0.0;
    for a in 1..=n_max {
        for b in 1..=(n_max - a) {
            defect = defect.max(upper[a + b - 1] - upper[a - 1] - upper[b - 1]);
            defect = defect.max(lower[a - 1] + lower[b - 1] - lower[a + b - 1]);
        }
    }
    let c_bound = upper.iter().zip(&lower).map(|(a, b)| a - b).fold(0.0, f64::max);
    Ok(Sandwich { upper, lower, c_bound, worst_deviation: worst, additivity_defect: defect })
}

/// 𝓣 − ℓ, whose operator is T⁻g + ℓ.
#[derive(Debug, Clone)]
pub struct Calibrated {
    inner: TransferHandle,
    ell: f64,
    cost: Option<CostMatrix>,
}

/// 𝓣 − ℓ. With ℓ = 0 the transfer itself is returned.
pub fn calibrate(t: TransferHandle, ell: f64) -> Result<TransferHandle> {
    if !ell.is_finite() {
        return Err(Error::input("calibration constant must be finite"));
    }
    if ell == 0.0 {
        return Ok(t);
    }
    let cost = t.mk_cost().map(|c| c.map(|v| v - ell));
    Ok(Arc::new(Calibrated { inner: t, ell, cost }))
}

fn shifted(op: Result<OpValue>, s: f64) -> Result<OpValue> {
    let op = op?;
    let values = op.values.iter().map(|v| v + s).collect();
    Ok(OpValue::new(values, op.jacobian, op.cols))
}

impl Transfer for Calibrated {
    fn name(&self) -> String {
        format!("{} − {}", self.inner.name(), self.ell)
    }

    fn direction(&self) -> Direction {
        self.inner.direction()
    }

    fn source(&self) -> &Arc<FiniteSpace> {
        self.inner.source()
    }

    fn target(&self) -> &Arc<FiniteSpace> {
        self.inner.target()
    }

    fn dirac_domain(&self) -> bool {
        self.inner.dirac_domain()
    }

    fn eval(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<f64> {
        Ok(self.inner.eval(mu, nu)? - self.ell)
    }

    fn eval_with_subgradients(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<EvalGrad> {
        let e = self.inner.eval_with_subgradients(mu, nu)?;
        Ok(EvalGrad { value: e.value - self.ell, ..e })
    }

    fn dirac_row(&self, x: usize, sigma: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (v, g) = self.inner.dirac_row(x, sigma)?;
        Ok((v - self.ell, g))
    }

    fn backward(&self, g: &[f64]) -> Result<OpValue> {
        shifted(self.inner.backward(g), self.ell)
    }

    fn forward(&self, f: &[f64]) -> Result<OpValue> {
        shifted(self.inner.forward(f), -self.ell)
    }

    fn conj_mu(&self, mu: &ProbMeasure, g: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (v, d) = self.inner.conj_mu(mu, g)?;
        Ok((v + self.ell, d))
    }

    fn conj_nu(&self, nu: &ProbMeasure, f: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (v, d) = self.inner.conj_nu(nu, f)?;
        Ok((v + self.ell, d))
    }

    fn as_pushforward(&self) -> Option<&PointMap> {
        None
    }

    fn mk_cost(&self) -> Option<&CostMatrix> {
        self.cost.as_ref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KamStage {
    /// Plain iteration converged.
    Direct,
    /// Windowed limsup first, then monotone iteration.
    TwoStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KamResult {
    pub ell: f64,
    /// The fixed point, pinned to 0 at the base point.
    pub u: Potential,
    /// ‖T⁻u − u‖_∞ for the calibrated operator.
    pub residual: f64,
    pub iterations: usize,
    pub stage: KamStage,
    pub period: Option<usize>,
    pub c_bound: f64,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
}

fn pin(u: &mut [f64], base: usize) {
    let b = u[base];
    u.iter_mut().for_each(|v| *v -= b);
}

/// A fixed point of the calibrated operator: plain iteration, and when it
/// keeps oscillating, the windowed limsup v of the orbit followed by the
/// monotone iteration Tv ≥ v.
pub fn weak_kam_solve(t: &dyn Transfer, cfg: &KamConfig) -> Result<KamResult> {
    cfg.validate()?;
    check_kam_domain(t)?;
    let est = effective_constant(t, cfg)?;
    let scale = est.c_bound.max(1.0);
    let slack = 1e-8 * scale;
    let off = if est.converged { est.ell.abs() > slack } else { est.lower > slack || est.upper < -slack };
    if off {
        return Err(Error::input(format!("transfer is not calibrated: ℓ ≈ {:e}", est.ell)));
    }
    let base = cfg.base_index(t.source())?;
    let n = t.source().len();
    let mut trace = Vec::new();
    let residual_of = |u: &[f64]| -> Result<f64> { Ok(sup_dist(&t.backward(u)?.values, u)) };

    // stage one: plain iteration from 0
    let mut u = vec![0.0; n];
    let budget = cfg.max_iters.min(4 * cfg.window.max(n * n) + est.transient.unwrap_or(0) + 16);
    for k in 1..=budget {
        let mut next = t.backward(&u)?.values;
        pin(&mut next, base);
        let step = sup_dist(&next, &u);
        let (lo, hi) = spread(&next);
        trace.push(TraceRow { n: k, upper: -lo, lower: -hi, residual: step });
        u = next;
        if step <= cfg.tol {
            let residual = residual_of(&u)?;
            return Ok(KamResult {
                ell: 0.0,
                u: Potential::new(t.source().clone(), u)?,
                residual,
                iterations: k,
                stage: KamStage::Direct,
                period: est.period,
                c_bound: est.c_bound,
                trace,
                converged: residual <= cfg.tol,
            });
        }
    }

    // stage two: v = max over a window of the unpinned orbit, then Tv ≥ v
    // increases to a fixed point
    let burn = est.transient.unwrap_or(n * n).max(n * n);
    let window = est.period.unwrap_or(cfg.window).max(1);
    let mut w = vec![0.0; n];
    for _ in 0..burn {
        w = t.backward(&w)?.values;
    }
    let mut v = w.clone();
    for _ in 1..window {
        w = t.backward(&w)?.values;
        v.iter_mut().zip(&w).for_each(|(a, b)| *a = a.max(*b));
    }
    let mut iterations = trace.len();
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        iterations += 1;
        let next = t.backward(&v)?.values;
        let step = sup_dist(&next, &v);
        let (lo, hi) = spread(&next);
        trace.push(TraceRow { n: iterations, upper: -lo, lower: -hi, residual: step });
        v = next;
        if step <= cfg.tol {
            converged = true;
            break;
        }
    }
    pin(&mut v, base);
    let residual = residual_of(&v)?;
    Ok(KamResult {
        ell: 0.0,
        u: Potential::new(t.source().clone(), v)?,
        residual,
        iterations,
        stage: KamStage::TwoStage,
        period: est.period,
        c_bound: est.c_bound,
        trace,
        converged: converged && residual <= cfg.tol,
    })
}

/// Estimates ℓ, calibrates and solves; the result carries the original ℓ.
pub fn weak_kam(t: TransferHandle, cfg: &KamConfig) -> Result<(KamResult, TransferHandle)> {
    let est = effective_constant(t.as_ref(), cfg)?;
    let ell = est.exact.as_ref().map_or(est.ell, |e| e.karp);
    let cal = calibrate(t, ell)?;
    let mut res = weak_kam_solve(cal.as_ref(), cfg)?;
    res.ell = ell;
    Ok((res, cal))
}

/// Largest violation of u(y) − u(x) ≤ c(x,y), the domination property of
/// fixed points of the c-transform.
pub fn domination_defect(c: &CostMatrix, u: &[f64]) -> f64 {
    let n = c.rows();
    let mut worst = f64::NEG_INFINITY;
    for x in 0..n {
        for y in 0..n {
            if !is_forbidden(c.get(x, y)) {
                worst = worst.max(u[y] - u[x] - c.get(x, y));
            }
        }
    }
    worst
}
