//! The barrier h(x,y) = 𝓣∞(δₓ,δ_y) and the Aubry set.
//!
//! For an MK cost the calibrated min-plus powers cⁿ are eventually periodic
//! and h is their elementwise minimum over one period. Other transfers get
//! a lower bound: 𝓣ₙ(δₓ,δ_y) ≥ g(y) − Tⁿg(x) for any g, maximized by pattern
//! search from g = −K·1_{≠y}, then minimized over a tail window.

use serde::{Deserialize, Serialize};

use super::{calibrate, check_kam_domain, KamConfig};
use crate::catalog::{dirac_cost_matrix, TransferHandle};
use crate::error::{Error, Result};
use crate::measure::{CostMatrix, Coupling, ProbMeasure};
use crate::par::{map_range, Execution};
use crate::solvers::cycle::solve_stationary_lp;
use crate::solvers::local::{pattern_minimize, PatternConfig};
use crate::solvers::minplus::minplus_compose;
use crate::solvers::transport::solve_transport_lp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BarrierRoute {
    MinPlus,
    /// Seeded lower bound; not a certified value.
    LowerBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeierlsBarrier {
    pub h: CostMatrix,
    pub ell_used: f64,
    pub route: BarrierRoute,
    pub period: Option<usize>,
    /// Power at which the period was confirmed.
    pub burn_in: usize,
    pub converged: bool,
    /// max |h ⊗ h − h|.
    pub idempotence_defect: f64,
    pub notes: Vec<String>,
}

/// T∞f(x) = max_z f(z) − h(x,z).
pub fn barrier_operator(h: &CostMatrix, f: &[f64]) -> Vec<f64> {
    (0..h.rows()).map(|x| h.row(x).iter().zip(f).map(|(c, v)| v - c).fold(f64::NEG_INFINITY, f64::max)).collect()
}

fn max_abs_diff(a: &CostMatrix, b: &CostMatrix) -> f64 {
    a.entries().iter().zip(b.entries()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn elementwise_min(acc: &mut [f64], p: &CostMatrix) {
    acc.iter_mut().zip(p.entries()).for_each(|(a, b)| *a = a.min(*b));
}

fn minplus_barrier(c: &CostMatrix, cfg: &KamConfig) -> Result<(CostMatrix, Option<usize>, usize, bool)> {
    let n = c.rows();
    let burn = n * n;
    let scale = c.entries().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-9 * scale;
    let mut hist: Vec<CostMatrix> = vec![c.clone()];
    let mut k = 1;
    while k < cfg.max_iters {
        k += 1;
        let next = minplus_compose(c, hist.last().expect("nonempty"))?;
        hist.push(next);
        if hist.len() > cfg.window + 1 {
            hist.remove(0);
        }
        if k < burn {
            continue;
        }
        let last = hist.len() - 1;
        for q in 1..hist.len() {
            if max_abs_diff(&hist[last], &hist[last - q]) <= tol {
                let mut h = hist[last].entries().to_vec();
                for p in &hist[last - q + 1..last] {
                    elementwise_min(&mut h, p);
                }
                let h = CostMatrix::new(c.source().clone(), c.target().clone(), h)?;
                return Ok((h, Some(q), k, true));
            }
        }
    }
    // no period: the window minimum brackets the liminf from above
    let mut h = hist[0].entries().to_vec();
    for p in &hist[1..] {
        elementwise_min(&mut h, p);
    }
    Ok((CostMatrix::new(c.source().clone(), c.target().clone(), h)?, None, k, false))
}

/// Lower bound of 𝓣ₙ(δₓ,δ_y) over the tail window, entries in parallel.
fn generic_barrier(t: &TransferHandle, cfg: &KamConfig, exec: Execution) -> Result<(CostMatrix, usize)> {
    let space = t.source().clone();
    let n = space.len();
    let dirac = dirac_cost_matrix(t.as_ref())?;
    let spread = dirac.entries().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let big = 10.0 * (1.0 + spread) * (n as f64 + 1.0);
    let burn = n * n;
    let window = cfg.window.clamp(1, 8);
    let powers: Vec<usize> = (burn..burn + window).collect();
    let pat = PatternConfig { initial_step: 1.0, max_evals: 600, radius: 2.0 * big, ..PatternConfig::default() };
    let entries = map_range(exec, n * n, |k| {
        let (x, y) = (k / n, k % n);
        let mut best = f64::INFINITY;
        for &p in &powers {
            let value = |g: &[f64]| -> f64 {
                let mut u = g.to_vec();
                for _ in 0..p {
                    match t.backward(&u) {
                        Ok(op) => u = op.values,
                        Err(_) => return f64::NAN,
                    }
                }
                g[y] - u[x]
            };
            let mut seed = vec![-big; n];
            seed[y] = 0.0;
            let found = pattern_minimize(|g| -value(g), seed, &pat);
            best = best.min(-found.value);
        }
        best
    });
    Ok((CostMatrix::new(space.clone(), space, entries)?, burn + window))
}

/// The barrier of 𝓣 − ℓ.
pub fn peierls_barrier(t: TransferHandle, ell: f64, cfg: &KamConfig) -> Result<PeierlsBarrier> {
    cfg.validate()?;
    check_kam_domain(t.as_ref())?;
    let cal = calibrate(t, ell)?;
    let mut notes = Vec::new();
    let (h, period, burn_in, converged, route) = match cal.mk_cost() {
        Some(c) => {
            let (h, period, burn, ok) = minplus_barrier(c, cfg)?;
            if !ok {
                notes.push(format!("no period found within {} powers; h is the minimum over the last window", cfg.max_iters));
            }
            (h, period, burn, ok, BarrierRoute::MinPlus)
        }
        None => {
            let (h, burn) = generic_barrier(&cal, cfg, Execution::default())?;
            notes.push("seeded lower bound on the barrier, not a certified value".to_string());
            (h, None, burn, false, BarrierRoute::LowerBound)
        }
    };
    let idempotence_defect = max_abs_diff(&minplus_compose(&h, &h)?, &h);
    Ok(PeierlsBarrier { h, ell_used: ell, route, period, burn_in, converged, idempotence_defect, notes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AubryMeasure {
    pub weights: Vec<f64>,
    /// 𝓣∞(μ,μ), zero for members of the Aubry set.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AubryReport {
    pub aubry_points: Vec<String>,
    pub aubry_indices: Vec<usize>,
    /// Diracs at Aubry points, the Mather marginal and pairwise midpoints.
    pub aubry_measures: Vec<AubryMeasure>,
    /// inf 𝓣(μ,μ) after calibration.
    pub mather_value: f64,
    /// Same for 𝓣 itself; equals ℓ.
    pub mather_value_uncalibrated: f64,
    pub mather_coupling: Coupling,
    pub mather_marginal: Vec<f64>,
    /// Whether the Mather LP sees the exact cost (MK) or the Dirac values.
    pub mather_exact: bool,
    /// max |h(x,y) − min_z h(x,z) + h(z,y)| over z Aubry.
    pub factorization_defect: f64,
    pub min_diagonal: f64,
    pub tol: f64,
    /// Tolerances tried before the Aubry set came out non-empty.
    pub tol_escalations: Vec<f64>,
}

/// Aubry points, Mather measure and the factorization of h through the
/// Aubry set.
pub fn aubry_mather(t: TransferHandle, ell: f64, barrier: &PeierlsBarrier, tol: f64) -> Result<AubryReport> {
    if !(tol > 0.0) {
        return Err(Error::input("tol must be positive"));
    }
    let h = &barrier.h;
    let n = h.rows();
    let space = t.source().clone();
    let mut tol_used = tol;
    let mut escalations = Vec::new();
    let mut idx: Vec<usize> = (0..n).filter(|&x| h.get(x, x) <= tol_used).collect();
    while idx.is_empty() {
        escalations.push(tol_used);
        tol_used *= 10.0;
        if tol_used > 1e-3 {
            return Err(Error::domain(format!(
                "empty Aubry set up to tol {:e}; min diagonal {:e}",
                tol_used / 10.0,
                min_diag(h)
            )));
        }
        idx = (0..n).filter(|&x| h.get(x, x) <= tol_used).collect();
    }

    let (cost, exact) = match t.mk_cost() {
        Some(c) => (c.clone(), true),
        None => (dirac_cost_matrix(t.as_ref())?, false),
    };
    let raw = solve_stationary_lp(&cost)?;
    let cal_cost = cost.map(|v| v - ell);
    let cal = solve_stationary_lp(&cal_cost)?;
    let marginal = cal.coupling.row_marginal().weights().to_vec();

    let mut factorization_defect: f64 = 0.0;
    for x in 0..n {
        for y in 0..n {
            let through = idx.iter().map(|&z| h.get(x, z) + h.get(z, y)).fold(f64::INFINITY, f64::min);
            factorization_defect = factorization_defect.max((h.get(x, y) - through).abs());
        }
    }

    let self_value = |w: &[f64]| -> Result<f64> {
        let mu = ProbMeasure::new(space.clone(), w.to_vec())?;
        Ok(solve_transport_lp(h, &mu, &mu)?.value)
    };
    let mut measures = Vec::new();
    let mut candidates: Vec<Vec<f64>> = idx
        .iter()
        .map(|&x| {
            let mut e = vec![0.0; n];
            e[x] = 1.0;
            e
        })
        .collect();
    candidates.push(marginal.clone());
    let base = candidates.len();
    for i in 0..base {
        for j in (i + 1)..base {
            candidates.push(candidates[i].iter().zip(&candidates[j]).map(|(a, b)| 0.5 * (a + b)).collect());
        }
    }
    for w in candidates {
        let value = self_value(&w)?;
        measures.push(AubryMeasure { weights: w, value });
    }

    Ok(AubryReport {
        aubry_points: idx.iter().map(|&x| space.points()[x].clone()).collect(),
        aubry_indices: idx,
        aubry_measures: measures,
        mather_value: cal.value,
        mather_value_uncalibrated: raw.value,
        mather_coupling: cal.coupling,
        mather_marginal: marginal,
        mather_exact: exact,
        factorization_defect,
        min_diagonal: min_diag(h),
        tol: tol_used,
        tol_escalations: escalations,
    })
}

fn min_diag(h: &CostMatrix) -> f64 {
    (0..h.rows()).map(|x| h.get(x, x)).fold(f64::INFINITY, f64::min)
}
