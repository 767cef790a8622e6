//! Concrete transfers. Each one evaluates 𝓣(μ,ν) and exposes whichever
//! Kantorovich operators it has.
//!
//! Operators return their values together with one (sub/super)gradient row
//! per output point. For a backward operator, row x is the maximizing
//! probability σ in T⁻g(x) = sup_σ ⟨g,σ⟩ − 𝓣(δₓ,σ), which is what the dual
//! ascent and the composition rules need.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{check_space, CostMatrix, FiniteSpace, PointMap, ProbMeasure};
use crate::solvers::ascent::{max_over_potentials, AscentConfig, AscentResult};

mod classical;
mod martingale;
mod schrodinger;
mod weak;

pub use classical::{brenier_transfer, kr_transfer, mk_transfer, pushforward_transfer, trivial_transfer, tv_transfer};
pub use classical::{legendre_discrete, Brenier, Mk, Pushforward, Trivial};
pub use martingale::{convex_order, martingale_transfer, Martingale};
pub use schrodinger::{schrodinger_transfer, sinkhorn_kl, MarkovKernelModel, Schrodinger};
pub use weak::{
    barycentric_transfer, marton_transfer, weak_ot_transfer, weak_ot_transfer_masked, weak_primal, Barycentric, CostOracle,
    Marton, MartonParams, WeakOt, WeakOtConfig, WeakPrimal,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Backward,
    Forward,
    Both,
}

impl Direction {
    pub fn has_backward(self) -> bool {
        matches!(self, Direction::Backward | Direction::Both)
    }

    pub fn has_forward(self) -> bool {
        matches!(self, Direction::Forward | Direction::Both)
    }
}

/// Operator output: values and a gradient row per output point.
#[derive(Debug, Clone, PartialEq)]
pub struct OpValue {
    pub values: Vec<f64>,
    /// Row-major, `values.len()` rows of length `cols`.
    pub jacobian: Vec<f64>,
    pub cols: usize,
}

impl OpValue {
    pub fn new(values: Vec<f64>, jacobian: Vec<f64>, cols: usize) -> Self {
        debug_assert_eq!(jacobian.len(), values.len() * cols);
        OpValue { values, jacobian, cols }
    }

    /// Values only, with each row a point mass at `argmax[i]`.
    pub fn from_argmax(values: Vec<f64>, argmax: &[usize], cols: usize) -> Self {
        let mut jacobian = vec![0.0; values.len() * cols];
        for (i, &j) in argmax.iter().enumerate() {
            jacobian[i * cols + j] = 1.0;
        }
        OpValue { values, jacobian, cols }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.jacobian[i * self.cols..(i + 1) * self.cols]
    }

    /// Σᵢ wᵢ · row i.
    pub fn weighted_rows(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (i, wi) in w.iter().enumerate() {
            if *wi != 0.0 {
                for (o, r) in out.iter_mut().zip(self.row(i)) {
                    *o += wi * r;
                }
            }
        }
        out
    }

    /// Chain rule for `self ∘ inner`: rows of `self` times the jacobian of
    /// `inner`.
    pub fn compose_jacobian(&self, inner: &OpValue) -> Vec<f64> {
        let n = self.values.len();
        let mut out = vec![0.0; n * inner.cols];
        for i in 0..n {
            let row = inner.weighted_rows(self.row(i));
            out[i * inner.cols..(i + 1) * inner.cols].copy_from_slice(&row);
        }
        out
    }
}

/// A value with subgradients in each measure argument.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalGrad {
    pub value: f64,
    pub d_mu: Vec<f64>,
    pub d_nu: Vec<f64>,
}

pub trait Transfer: Send + Sync + fmt::Debug {
    fn name(&self) -> String;
    fn direction(&self) -> Direction;
    fn source(&self) -> &Arc<FiniteSpace>;
    fn target(&self) -> &Arc<FiniteSpace>;
    /// Whether every pair of Dirac masses has a finite value.
    fn dirac_domain(&self) -> bool;

    /// 𝓣(μ,ν); `+∞` outside the domain.
    fn eval(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<f64>;

    /// Value with subgradients in μ and ν, where the transfer can supply them.
    fn eval_with_subgradients(&self, _mu: &ProbMeasure, _nu: &ProbMeasure) -> Result<EvalGrad> {
        Err(Error::domain(format!("{} does not provide subgradients", self.name())))
    }

    /// c(x,σ) = 𝓣(δₓ,σ) with a subgradient in σ: the cost of the weak
    /// transport this transfer induces. Falls back on the dual potential.
    fn dirac_row(&self, x: usize, sigma: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mu = ProbMeasure::dirac_at(self.source().clone(), x);
        let nu = ProbMeasure::from_unnormalized(self.target().clone(), sigma.iter().map(|v| v.max(0.0)).collect())?;
        match self.eval_with_subgradients(&mu, &nu) {
            Ok(e) => Ok((e.value, e.d_nu)),
            Err(Error::Domain(_)) => {
                let value = self.eval(&mu, &nu)?;
                if !value.is_finite() {
                    return Ok((value, vec![0.0; sigma.len()]));
                }
                let mut cfg = AscentConfig::default();
                cfg.max_iters = 200;
                let oracle = |g: &[f64]| match self.backward(g) {
                    Ok(op) => (nu.integrate(g) - op.values[x], nu.weights().iter().zip(op.row(x)).map(|(a, b)| a - b).collect()),
                    Err(_) => (f64::NAN, vec![f64::NAN; g.len()]),
                };
                let d = max_over_potentials(oracle, sigma.len(), Some(0), &cfg)?;
                Ok((value, d.point))
            }
            Err(e) => Err(e),
        }
    }

    /// T⁻g on the source, for g on the target.
    fn backward(&self, _g: &[f64]) -> Result<OpValue> {
        Err(Error::domain(format!("{} has no backward operator", self.name())))
    }

    /// T⁺f on the target, for f on the source.
    fn forward(&self, _f: &[f64]) -> Result<OpValue> {
        Err(Error::domain(format!("{} has no forward operator", self.name())))
    }

    /// Partial conjugate 𝓣*_μ(g) = sup_ν ⟨g,ν⟩ − 𝓣(μ,ν) and its gradient
    /// in g. Linear transfers give ⟨T⁻g, μ⟩.
    fn conj_mu(&self, mu: &ProbMeasure, g: &[f64]) -> Result<(f64, Vec<f64>)> {
        let op = self.backward(g)?;
        Ok((mu.integrate(&op.values), op.weighted_rows(mu.weights())))
    }

    /// Partial conjugate in the first slot, 𝓣*_ν(f) = sup_μ ⟨f,μ⟩ − 𝓣(μ,ν),
    /// which is −⟨T⁺(−f), ν⟩ for forward linear transfers.
    fn conj_nu(&self, nu: &ProbMeasure, f: &[f64]) -> Result<(f64, Vec<f64>)> {
        let neg: Vec<f64> = f.iter().map(|v| -v).collect();
        let op = self.forward(&neg)?;
        Ok((-nu.integrate(&op.values), op.weighted_rows(nu.weights())))
    }

    /// The underlying map, for pushforward transfers.
    fn as_pushforward(&self) -> Option<&PointMap> {
        None
    }

    /// The cost, for Monge–Kantorovich transfers (enables exact min-plus
    /// routes downstream).
    fn mk_cost(&self) -> Option<&CostMatrix> {
        None
    }
}

pub type TransferHandle = Arc<dyn Transfer>;

pub(crate) fn check_pair<T: Transfer + ?Sized>(t: &T, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<()> {
    check_space(t.source(), mu.space())?;
    check_space(t.target(), nu.space())
}

pub(crate) fn check_len(what: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::input(format!("{what} has {} values, expected {n}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::input(format!("{what} must be finite")));
    }
    Ok(())
}

/// sup_g ⟨g,ν⟩ − 𝓣*_μ(g), the backward dual value. The objective is
/// translation invariant, so g is pinned to 0 at the first point.
pub fn backward_dual<T: Transfer + ?Sized>(
    t: &T,
    mu: &ProbMeasure,
    nu: &ProbMeasure,
    cfg: &AscentConfig,
) -> Result<AscentResult> {
    check_pair(t, mu, nu)?;
    let oracle = |g: &[f64]| match t.conj_mu(mu, g) {
        Ok((c, grad)) => {
            let v = nu.integrate(g) - c;
            let d = nu.weights().iter().zip(&grad).map(|(a, b)| a - b).collect();
            (v, d)
        }
        Err(_) => (f64::NAN, vec![f64::NAN; g.len()]),
    };
    max_over_potentials(oracle, t.target().len(), Some(0), cfg)
}

/// sup_f ⟨T⁺f,ν⟩ − ⟨f,μ⟩ for forward transfers.
pub fn forward_dual<T: Transfer + ?Sized>(t: &T, mu: &ProbMeasure, nu: &ProbMeasure, cfg: &AscentConfig) -> Result<AscentResult> {
    check_pair(t, mu, nu)?;
    let oracle = |f: &[f64]| match t.forward(f) {
        Ok(op) => {
            let v = nu.integrate(&op.values) - mu.integrate(f);
            let mut d = op.weighted_rows(nu.weights());
            d.iter_mut().zip(mu.weights()).for_each(|(a, m)| *a -= m);
            (v, d)
        }
        Err(_) => (f64::NAN, vec![f64::NAN; f.len()]),
    };
    max_over_potentials(oracle, t.source().len(), Some(0), cfg)
}

/// c(x,y) = 𝓣(δₓ,δ_y). The MK transfer of this cost bounds 𝓣 from above.
pub fn dirac_cost_matrix(t: &dyn Transfer) -> Result<CostMatrix> {
    let (src, tgt) = (t.source().clone(), t.target().clone());
    let mut entries = Vec::with_capacity(src.len() * tgt.len());
    for x in 0..src.len() {
        for y in 0..tgt.len() {
            let v = t.eval(&ProbMeasure::dirac_at(src.clone(), x), &ProbMeasure::dirac_at(tgt.clone(), y))?;
            entries.push(if v.is_finite() { v } else { crate::measure::INF_COST });
        }
    }
    CostMatrix::new(src, tgt, entries)
}

/// Violations of the operator axioms found on seeded random potentials.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub samples: usize,
    pub monotone: usize,
    pub convex: usize,
    pub lipschitz: usize,
    pub translation: usize,
    /// Largest violation seen across all checks.
    pub worst: f64,
}

impl AxiomReport {
    pub fn passed(&self) -> bool {
        self.monotone + self.convex + self.lipschitz + self.translation == 0
    }
}

/// Checks monotonicity, convexity (concavity for forward operators),
/// 1-Lipschitz continuity in sup-norm and translation covariance.
pub fn check_operator_axioms(
    op: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    dim: usize,
    concave: bool,
    samples: usize,
    seed: u64,
    tol: f64,
) -> Result<AxiomReport> {
    use rand::Rng;
    let mut r = crate::rng::stream(seed, 0xa110);
    let mut rep = AxiomReport { samples, ..Default::default() };
    let sign = if concave { -1.0 } else { 1.0 };
    let note = |count: &mut usize, excess: f64, worst: &mut f64| {
        if excess > tol {
            *count += 1;
        }
        *worst = worst.max(excess);
    };
    for _ in 0..samples {
        let scale = r.gen_range(0.1..4.0);
        let f1 = crate::rng::uniform_vec(&mut r, dim, -scale, scale);
        let bump = crate::rng::uniform_vec(&mut r, dim, 0.0, scale);
        let f2: Vec<f64> = f1.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let f3 = crate::rng::uniform_vec(&mut r, dim, -scale, scale);
        let lam: f64 = r.gen_range(0.0..1.0);
        let k: f64 = r.gen_range(-3.0..3.0);
        let (t1, t2, t3) = (op(&f1)?, op(&f2)?, op(&f3)?);
        for (a, b) in t1.iter().zip(&t2) {
            note(&mut rep.monotone, a - b, &mut rep.worst);
        }
        let mix: Vec<f64> = f1.iter().zip(&f3).map(|(a, b)| lam * a + (1.0 - lam) * b).collect();
        let tm = op(&mix)?;
        for i in 0..tm.len() {
            let chord = lam * t1[i] + (1.0 - lam) * t3[i];
            note(&mut rep.convex, sign * (tm[i] - chord), &mut rep.worst);
        }
        let dist = f1.iter().zip(&f3).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let out = t1.iter().zip(&t3).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        note(&mut rep.lipschitz, out - dist, &mut rep.worst);
        let shifted: Vec<f64> = f1.iter().map(|a| a + k).collect();
        let ts = op(&shifted)?;
        for (a, b) in ts.iter().zip(&t1) {
            note(&mut rep.translation, (a - b - k).abs(), &mut rep.worst);
        }
    }
    Ok(rep)
}

/// Axiom check for a transfer's backward operator.
pub fn check_backward_axioms(t: &dyn Transfer, samples: usize, seed: u64, tol: f64) -> Result<AxiomReport> {
    let op = |g: &[f64]| t.backward(g).map(|o| o.values);
    check_operator_axioms(&op, t.target().len(), false, samples, seed, tol)
}

/// Axiom check for a transfer's forward operator.
pub fn check_forward_axioms(t: &dyn Transfer, samples: usize, seed: u64, tol: f64) -> Result<AxiomReport> {
    let op = |f: &[f64]| t.forward(f).map(|o| o.values);
    check_operator_axioms(&op, t.source().len(), true, samples, seed, tol)
}
