//! Two-measure inequalities
//!
//!   𝓕(σ₁,σ₂) ≤ λ₁(𝓣₁⋆𝓗)(σ₁,μ) + λ₂(𝓣₂⋆𝓗)(σ₂,ν)  for all σ₁, σ₂,
//!
//! with 𝓗(ρ,μ) the relative entropy of ρ with respect to μ and forward
//! linear 𝓣ᵢ. Eliminating σ₁ and σ₂ leaves the criterion
//!
//!   (∫e^{−T₁⁺(F_i⁻g/λ₁)} dμ)^{λ₁} (∫e^{−T₂⁺(−g/λ₂)} dν)^{λ₂} ≤ 1,
//!
//! evaluated in the log domain.

use crate::catalog::{OpValue, TransferHandle};
use crate::error::{Error, Result};
use crate::measure::{check_space, kl_raw, ProbMeasure};
use crate::par::map_range;
use crate::rng;
use crate::solvers::ascent::{max_over_potentials, AscentConfig};
use crate::solvers::local::{simplex_grid, simplex_grid_size, simplex_pattern_minimize, PatternConfig};

use super::{
    argmin, measure_of, nan_to_inf, potential_search, primal_starts, report, DualityValues, Form, GapReport, Lhs, PrimalSearch,
    SearchPath, SearchSettings,
};

#[derive(Debug, Clone)]
pub struct Maurey {
    lhs: Lhs,
    t1: TransferHandle,
    t2: TransferHandle,
    lambda1: f64,
    lambda2: f64,
    mu: ProbMeasure,
    nu: ProbMeasure,
}

/// log ∫ e^{−u} dμ, shifted for stability; +∞ entries contribute nothing.
pub fn log_mean_exp_neg(u: &[f64], mu: &ProbMeasure) -> f64 {
    let m = mu.support().map(|i| u[i]).fold(f64::INFINITY, f64::min);
    if m == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = mu.support().map(|i| mu.weights()[i] * (-(u[i] - m)).exp()).sum();
    s.ln() - m
}

/// T⁺k, with the pushforward's forward operator (minimum over each
/// preimage, +∞ off the image) filled in.
fn forward_op(t: &TransferHandle, k: &[f64]) -> Result<OpValue> {
    if t.direction().has_forward() {
        return t.forward(k);
    }
    let Some(map) = t.as_pushforward() else {
        return Err(Error::input(format!("{} has no forward operator", t.name())));
    };
    let n = map.target.len();
    let mut values = vec![f64::INFINITY; n];
    let mut arg = vec![0; n];
    for (y, &x) in map.image.iter().enumerate() {
        if k[y] < values[x] {
            values[x] = k[y];
            arg[x] = y;
        }
    }
    Ok(OpValue::from_argmax(values, &arg, k.len()))
}

impl Maurey {
    pub fn new(
        lhs: Lhs,
        t1: TransferHandle,
        t2: TransferHandle,
        lambda1: f64,
        lambda2: f64,
        mu: ProbMeasure,
        nu: ProbMeasure,
    ) -> Result<Self> {
        if !(lambda1 > 0.0 && lambda2 > 0.0 && lambda1.is_finite() && lambda2.is_finite()) {
            return Err(Error::input("Maurey weights must be positive and finite"));
        }
        check_space(lhs.source(), t1.source())?;
        check_space(lhs.target(), t2.source())?;
        check_space(t1.target(), mu.space())?;
        check_space(t2.target(), nu.space())?;
        for t in [&t1, &t2] {
            if !t.direction().has_forward() && t.as_pushforward().is_none() {
                return Err(Error::input(format!("{} has no forward operator", t.name())));
            }
        }
        if !lhs.has_backward() {
            return Err(Error::input(format!("{} has no backward operators", lhs.name())));
        }
        Ok(Maurey { lhs, t1, t2, lambda1, lambda2, mu, nu })
    }

    pub fn lhs(&self) -> &Lhs {
        &self.lhs
    }

    /// (𝓣⋆𝓗)(σ, a) = inf_ρ 𝓣(σ,ρ) + 𝓗(ρ,a). A pushforward gives 𝓗(map#σ, a);
    /// otherwise the concave dual sup_k −log∫e^{−T⁺k}da − ⟨k,σ⟩ is maximized.
    pub fn entropy_side(t: &TransferHandle, sigma: &ProbMeasure, anchor: &ProbMeasure) -> Result<f64> {
        check_space(t.source(), sigma.space())?;
        check_space(t.target(), anchor.space())?;
        if let Some(map) = t.as_pushforward() {
            let mut rho = vec![0.0; map.target.len()];
            for (y, &x) in map.image.iter().enumerate() {
                rho[x] += sigma.weights()[y];
            }
            return Ok(kl_raw(&rho, anchor.weights()));
        }
        let oracle = |k: &[f64]| {
            let Ok(op) = forward_op(t, k) else { return (f64::NAN, vec![f64::NAN; k.len()]) };
            let lz = log_mean_exp_neg(&op.values, anchor);
            let w: Vec<f64> = (0..op.values.len())
                .map(|x| if anchor.weights()[x] > 0.0 { anchor.weights()[x] * (-(op.values[x]) - lz).exp() } else { 0.0 })
                .collect();
            let grad = op.weighted_rows(&w).iter().zip(sigma.weights()).map(|(a, b)| a - b).collect();
            (-lz - sigma.integrate(k), grad)
        };
        Ok(max_over_potentials(oracle, sigma.len(), Some(0), &AscentConfig::default())?.value)
    }

    /// λ₁ log∫e^{−T₁⁺(F_i⁻g/λ₁)}dμ + λ₂ log∫e^{−T₂⁺(−g/λ₂)}dν, the log of
    /// the criterion's product.
    pub fn log_product(&self, index: Option<f64>, g: &[f64]) -> Result<f64> {
        let op = self.lhs.member(index, g)?;
        let k1: Vec<f64> = op.values.iter().map(|v| v / self.lambda1).collect();
        let k2: Vec<f64> = g.iter().map(|v| -v / self.lambda2).collect();
        let a = log_mean_exp_neg(&forward_op(&self.t1, &k1)?.values, &self.mu);
        let b = log_mean_exp_neg(&forward_op(&self.t2, &k2)?.values, &self.nu);
        Ok(self.lambda1 * a + self.lambda2 * b)
    }

    /// Largest product over seeded random potentials in [−r, r] and every
    /// family index.
    pub fn sampled_worst_product(&self, samples: usize, seed: u64, r: f64) -> Result<f64> {
        let mut rg = rng::stream(seed, 13);
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..samples {
            let g = rng::uniform_vec(&mut rg, self.lhs.target().len(), -r, r);
            for idx in self.lhs.indices() {
                worst = worst.max(self.log_product(idx, &g)?);
            }
        }
        Ok(worst.exp())
    }

    fn sides(&self, s1: &ProbMeasure, s2: &ProbMeasure) -> Result<(f64, f64)> {
        Ok((Self::entropy_side(&self.t1, s1, &self.mu)?, Self::entropy_side(&self.t2, s2, &self.nu)?))
    }

    /// λ₁(𝓣₁⋆𝓗)(σ₁,μ) + λ₂(𝓣₂⋆𝓗)(σ₂,ν) − 𝓕(σ₁,σ₂).
    pub fn primal_objective(&self, s1: &ProbMeasure, s2: &ProbMeasure) -> Result<f64> {
        let (a, b) = self.sides(s1, s2)?;
        Ok(self.lambda1 * a + self.lambda2 * b - self.lhs.eval(s1, s2)?)
    }

    fn objective_at(&self, w: &[f64]) -> f64 {
        let n1 = self.lhs.source().len();
        let (Some(s1), Some(s2)) = (measure_of(self.lhs.source(), &w[..n1]), measure_of(self.lhs.target(), &w[n1..])) else {
            return f64::INFINITY;
        };
        nan_to_inf(self.primal_objective(&s1, &s2).unwrap_or(f64::INFINITY))
    }

    fn primal(&self, settings: &SearchSettings) -> PrimalSearch {
        let (y1, y2) = (self.lhs.source().clone(), self.lhs.target().clone());
        let (n1, n2) = (y1.len(), y2.len());
        let blocks = [n1, n2];
        let f = |w: &[f64]| self.objective_at(w);
        if let (Some(mut m1), Some(mut m2)) = (settings.resolution(n1), settings.resolution(n2)) {
            while simplex_grid_size(n1, m1).saturating_mul(simplex_grid_size(n2, m2)) > settings.grid_cap && m1.max(m2) > 1 {
                if m1 >= m2 {
                    m1 /= 2
                } else {
                    m2 /= 2
                }
            }
            let g1 = simplex_grid(n1, m1, usize::MAX).expect("small grid");
            let g2 = simplex_grid(n2, m2, usize::MAX).expect("small grid");
            // the entropy sides depend on one block each
            let side1 = map_range(settings.exec, g1.len(), |a| {
                measure_of(&y1, &g1[a])
                    .map_or(f64::INFINITY, |s| Self::entropy_side(&self.t1, &s, &self.mu).unwrap_or(f64::INFINITY))
            });
            let side2 = map_range(settings.exec, g2.len(), |b| {
                measure_of(&y2, &g2[b])
                    .map_or(f64::INFINITY, |s| Self::entropy_side(&self.t2, &s, &self.nu).unwrap_or(f64::INFINITY))
            });
            let values = map_range(settings.exec, g1.len() * g2.len(), |k| {
                let (a, b) = (k / g2.len(), k % g2.len());
                let (Some(s1), Some(s2)) = (measure_of(&y1, &g1[a]), measure_of(&y2, &g2[b])) else { return f64::INFINITY };
                nan_to_inf(
                    self.lambda1 * side1[a] + self.lambda2 * side2[b] - self.lhs.eval(&s1, &s2).unwrap_or(f64::NEG_INFINITY),
                )
            });
            let best = argmin(&values);
            let start = [g1[best / g2.len()].clone(), g2[best % g2.len()].clone()].concat();
            let h = 1.0 / m1.max(m2) as f64;
            let pat = PatternConfig { initial_step: h, ..settings.pattern.clone() };
            let local = simplex_pattern_minimize(f, start.clone(), &blocks, &pat);
            let (value, point) = if local.value < values[best] { (local.value, local.point) } else { (values[best], start) };
            let grid_h = if m1 == m2 { Some(h) } else { Some(1.0 / m1.min(m2) as f64) };
            return PrimalSearch {
                value,
                point,
                path: SearchPath::Grid,
                grid_h,
                grid_points: values.len(),
                warnings: Vec::new(),
            };
        }
        let s1 = primal_starts(n1, settings);
        let s2 = primal_starts(n2, settings);
        let runs = map_range(settings.exec, s1.len(), |k| {
            simplex_pattern_minimize(f, [s1[k].clone(), s2[k % s2.len()].clone()].concat(), &blocks, &settings.pattern)
        });
        let best = argmin(&runs.iter().map(|r| r.value).collect::<Vec<_>>());
        PrimalSearch {
            value: runs[best].value,
            point: runs[best].point.clone(),
            path: SearchPath::Descent,
            grid_h: None,
            grid_points: 0,
            warnings: vec![format!("{n1}×{n2}-point simplices: grid skipped, multistart descent only")],
        }
    }
}

/// Both routes for the two-measure inequality; the dual gap is
/// 1 − (largest product).
pub fn maurey_check(m: &Maurey, settings: &SearchSettings) -> Result<GapReport> {
    settings.validate()?;
    let primal = m.primal(settings);
    let dual = potential_search(
        |idx, g| m.log_product(idx, g).map_or(f64::INFINITY, |v| -v),
        m.lhs.target().len(),
        &m.lhs.indices(),
        settings,
    );
    let dual_gap = 1.0 - (-dual.value).exp();
    let blocks = [m.lhs.source().len(), m.lhs.target().len()];
    Ok(report(Form::Maurey, DualityValues { primal, dual }, dual_gap, &blocks, settings))
}

impl Maurey {
    pub fn weights(&self) -> (f64, f64) {
        (self.lambda1, self.lambda2)
    }

    pub fn anchors(&self) -> (&ProbMeasure, &ProbMeasure) {
        (&self.mu, &self.nu)
    }

    pub fn links(&self) -> (&TransferHandle, &TransferHandle) {
        (&self.t1, &self.t2)
    }
}
