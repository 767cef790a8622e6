//! Convex transfers (suprema of backward linear transfers) and entropic
//! transfers, whose partial conjugate is β(⟨E⁻g, μ⟩) with β = log.
//!
//! A convex transfer exposes its exact partial conjugate 𝓕*_μ(g) and a
//! discretized family of member operators F_i⁻, with 𝓕 = sup_i 𝓣_i. Both
//! routes to the dual value are available: ascent on the conjugate and the
//! supremum of the member duals.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::algebra::minorant;
use crate::catalog::{OpValue, Transfer};
use crate::error::{Error, Result};
use crate::measure::{check_space, FiniteSpace, ProbMeasure};
use crate::scalar::{golden_max, ScalarFn};
use crate::solvers::ascent::{max_over_potentials, max_over_simplex, AscentConfig, AscentResult};

mod dv;
mod entropy;
mod ops;

pub use dv::{donsker_varadhan, DonskerVaradhan, GeneratorModel};
pub use entropy::{generalized_entropy, log_entropy, GeneralizedEntropy, LogEntropy};
pub use ops::{
    convex_convolve, entropic_convolve, power_transfer, scale_convex, ConvexConvolution, EntropicConvolution, PowerTransfer,
    ScaledConvex,
};

pub type ConvexHandle = Arc<dyn ConvexTransfer>;
pub type EntropicHandle = Arc<dyn Entropic>;

pub trait ConvexTransfer: Send + Sync + fmt::Debug {
    fn name(&self) -> String;
    fn source(&self) -> &Arc<FiniteSpace>;
    fn target(&self) -> &Arc<FiniteSpace>;

    fn eval(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<f64> {
        Ok(self.eval_grad_nu(mu, nu)?.0)
    }

    /// Value with a subgradient in ν (entries may be −∞ on the boundary).
    fn eval_grad_nu(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<(f64, Vec<f64>)>;

    /// Points σ may charge with 𝓕(μ,σ) finite.
    fn support_mask(&self, _mu: &ProbMeasure) -> Vec<bool> {
        vec![true; self.target().len()]
    }

    /// 𝓕*_μ(g) = sup_ν ⟨g,ν⟩ − 𝓕(μ,ν) with its gradient in g.
    fn conj_mu(&self, mu: &ProbMeasure, g: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// The discretized index set of the family.
    fn index_grid(&self) -> Vec<f64>;

    /// F_i⁻g.
    fn member(&self, index: f64, g: &[f64]) -> Result<OpValue>;

    /// sup_g ⟨g,ν⟩ − ⟨F_i⁻g, μ⟩.
    fn member_dual(&self, index: f64, mu: &ProbMeasure, nu: &ProbMeasure, cfg: &AscentConfig) -> Result<f64> {
        let oracle = |g: &[f64]| match self.member(index, g) {
            Ok(op) => {
                let d = nu.weights().iter().zip(op.weighted_rows(mu.weights())).map(|(a, b)| a - b).collect();
                (nu.integrate(g) - mu.integrate(&op.values), d)
            }
            Err(_) => (f64::NAN, vec![f64::NAN; g.len()]),
        };
        Ok(max_over_potentials(oracle, self.target().len(), None, cfg)?.value)
    }
}

/// β-backward transfers with β = log: 𝓔*_μ(g) = log ⟨E⁻g, μ⟩.
pub trait Entropic: ConvexTransfer {
    fn beta(&self) -> ScalarFn {
        ScalarFn::Log
    }

    /// E⁻g on the source: convex, monotone and positive.
    fn kop(&self, g: &[f64]) -> Result<OpValue>;
}

/// log ⟨E⁻g, μ⟩ with its gradient, from the operator value.
pub(crate) fn log_conj(op: &OpValue, mu: &ProbMeasure) -> Result<(f64, Vec<f64>)> {
    let m = mu.integrate(&op.values);
    if !(m > 0.0) {
        return Err(Error::domain("⟨E⁻g, μ⟩ is not positive"));
    }
    let w: Vec<f64> = mu.weights().iter().map(|v| v / m).collect();
    Ok((m.ln(), op.weighted_rows(&w)))
}

/// The member s E⁻g + (−log)⊖(s) = s E⁻g − 1 − log s.
pub(crate) fn entropic_member(op: OpValue, s: f64) -> Result<OpValue> {
    if !(s > 0.0) {
        return Err(Error::input("entropic family index must be positive"));
    }
    let shift = ScalarFn::NegLog.conj_dec(s);
    let values = op.values.iter().map(|v| s * v + shift).collect();
    let jacobian = op.jacobian.iter().map(|v| s * v).collect();
    Ok(OpValue::new(values, jacobian, op.cols))
}

/// n points from lo to hi in geometric progression.
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    let r = (hi / lo).ln() / (n - 1) as f64;
    (0..n).map(|i| lo * (r * i as f64).exp()).collect()
}

pub(crate) fn default_s_grid() -> Vec<f64> {
    geometric_grid(1e-3, 1e3, 64)
}

fn check_pair_spaces(t: &dyn ConvexTransfer, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<()> {
    check_space(t.source(), mu.space())?;
    check_space(t.target(), nu.space())
}

/// sup_g ⟨g,ν⟩ − 𝓕*_μ(g). Every partial conjugate of a transfer on
/// probability measures is translation covariant, so g is pinned at 0.
pub fn convex_dual(t: &dyn ConvexTransfer, mu: &ProbMeasure, nu: &ProbMeasure, cfg: &AscentConfig) -> Result<AscentResult> {
    check_pair_spaces(t, mu, nu)?;
    let oracle = |g: &[f64]| match t.conj_mu(mu, g) {
        Ok((c, grad)) => (nu.integrate(g) - c, nu.weights().iter().zip(&grad).map(|(a, b)| a - b).collect()),
        Err(_) => (f64::NAN, vec![f64::NAN; g.len()]),
    };
    // The subgradient in ν is an optimal potential, so its spread sizes the box.
    let mut cfg = cfg.clone();
    if let Ok((v, grad)) = t.eval_grad_nu(mu, nu) {
        let live: Vec<f64> = grad.iter().zip(nu.weights()).filter(|(_, n)| **n > 0.0).map(|(g, _)| *g).collect();
        if v.is_finite() && live.iter().all(|g| g.is_finite()) {
            let spread = live.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            cfg.box_radius = cfg.box_radius.max(4.0 * spread + 1.0);
        }
    }
    max_over_potentials(oracle, t.target().len(), Some(0), &cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyDual {
    pub value: f64,
    /// The index attaining the value (after refinement).
    pub index: f64,
    pub grid: Vec<f64>,
    pub member_values: Vec<f64>,
}

/// sup over the family of the member duals: the grid, then golden-section
/// refinement between the neighbours of the best grid index.
pub fn family_dual(t: &dyn ConvexTransfer, mu: &ProbMeasure, nu: &ProbMeasure, cfg: &AscentConfig) -> Result<FamilyDual> {
    check_pair_spaces(t, mu, nu)?;
    let grid = t.index_grid();
    if grid.is_empty() {
        return Err(Error::domain(format!("{} has no operator family", t.name())));
    }
    let member_values = grid.iter().map(|&i| t.member_dual(i, mu, nu, cfg)).collect::<Result<Vec<f64>>>()?;
    let best = (0..grid.len()).fold(0, |b, i| if member_values[i] > member_values[b] { i } else { b });
    let (mut value, mut index) = (member_values[best], grid[best]);
    if grid.len() > 1 {
        let lo = grid[best.saturating_sub(1)];
        let hi = grid[(best + 1).min(grid.len() - 1)];
        let f = |s: f64| t.member_dual(s, mu, nu, cfg).unwrap_or(f64::NEG_INFINITY);
        let (s, v) = golden_max(f, lo, hi, 1e-12);
        if v > value {
            (value, index) = (v, s);
        }
    }
    Ok(FamilyDual { value, index, grid, member_values })
}

/// inf_σ 𝓕(μ,σ) + 𝓣(σ,ν) with the minimizing σ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaMin {
    pub value: f64,
    pub sigma: Vec<f64>,
    /// Subgradient of the infimum in ν, from the linear part at σ.
    pub grad_nu: Vec<f64>,
    pub converged: bool,
}

/// inf_σ 𝓕(μ,σ) + 𝓣(σ,ν) over σ inside the support mask of 𝓕.
pub(crate) fn min_over_sigma(
    first: &dyn ConvexTransfer,
    t: &dyn Transfer,
    mu: &ProbMeasure,
    nu: &ProbMeasure,
    cfg: &AscentConfig,
) -> Result<SigmaMin> {
    check_space(first.source(), mu.space())?;
    check_space(t.target(), nu.space())?;
    let mid = t.source().clone();
    if let Some(map) = t.as_pushforward() {
        // σ is pinned down by ν when the map is injective
        let n = mid.len();
        let mut seen = vec![usize::MAX; nu.len()];
        let mut sigma = vec![0.0; n];
        for x in 0..n {
            let y = map.image[x];
            if seen[y] != usize::MAX {
                return Err(Error::domain("convolution with a non-injective pushforward is not supported"));
            }
            seen[y] = x;
            sigma[x] = nu.weights()[y];
        }
        let covered: f64 = sigma.iter().sum();
        if covered < 1.0 - 1e-10 {
            return Ok(SigmaMin { value: f64::INFINITY, sigma, grad_nu: vec![0.0; nu.len()], converged: true });
        }
        let s = ProbMeasure::from_unnormalized(mid, sigma.clone())?;
        let value = first.eval(mu, &s)?;
        return Ok(SigmaMin { value, sigma, grad_nu: vec![0.0; nu.len()], converged: true });
    }
    let mask = first.support_mask(mu);
    let idx: Vec<usize> = (0..mid.len()).filter(|&i| mask[i]).collect();
    if idx.is_empty() {
        return Ok(SigmaMin { value: f64::INFINITY, sigma: vec![0.0; mid.len()], grad_nu: vec![0.0; nu.len()], converged: true });
    }
    let embed = |p: &[f64]| {
        let mut s = vec![0.0; mid.len()];
        for (k, &i) in idx.iter().enumerate() {
            s[i] = p[k].max(0.0);
        }
        s
    };
    let oracle = |p: &[f64]| {
        let bad = (f64::NAN, vec![f64::NAN; p.len()]);
        let Ok(sigma) = ProbMeasure::from_unnormalized(mid.clone(), embed(p)) else { return bad };
        let (Ok((a, ga)), Ok(m)) = (first.eval_grad_nu(mu, &sigma), minorant(t, &sigma, nu, cfg)) else { return bad };
        if !(a + m.value).is_finite() || m.d_mu.is_empty() {
            return bad;
        }
        (-(a + m.value), idx.iter().map(|&i| -(ga[i] + m.d_mu[i])).collect())
    };
    let res = max_over_simplex(oracle, idx.len(), cfg)?;
    let sigma = embed(&res.point);
    let s = ProbMeasure::from_unnormalized(mid, sigma.clone())?;
    let m = minorant(t, &s, nu, cfg)?;
    Ok(SigmaMin { value: -res.value, sigma, grad_nu: m.d_nu, converged: res.converged })
}

#[cfg(test)]
mod tests;
