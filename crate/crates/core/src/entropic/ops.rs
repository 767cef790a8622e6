//! Powers α(𝓣) of linear transfers and inf-convolutions of convex or
//! entropic transfers with backward linear ones.

use std::sync::Arc;

use crate::algebra::minorant;
use crate::catalog::{backward_dual, check_pair, OpValue, TransferHandle};
use crate::error::{Error, Result};
use crate::measure::{check_space, FiniteSpace, ProbMeasure};
use crate::scalar::{golden_max, ScalarFn};
use crate::solvers::ascent::AscentConfig;

use super::{default_s_grid, entropic_member, log_conj, min_over_sigma, ConvexHandle, ConvexTransfer, Entropic, EntropicHandle};

/// α(𝓣) for a backward linear 𝓣. The members are
/// T_s⁻g = s T⁻(g/s) + α⊕(s) over a geometric grid of s.
#[derive(Debug, Clone)]
pub struct PowerTransfer {
    alpha: ScalarFn,
    inner: TransferHandle,
    grid: Vec<f64>,
    cfg: AscentConfig,
}

/// α must be convex and nondecreasing on ℝ⁺.
pub fn power_transfer(alpha: ScalarFn, inner: TransferHandle) -> Result<Arc<PowerTransfer>> {
    alpha.validate()?;
    if alpha.is_concave() || !alpha.check_shape(0.0, 100.0, 1000, 1e-9) {
        return Err(Error::input("power transfer needs a convex α"));
    }
    let samples: Vec<f64> = (0..=1000).map(|i| alpha.eval(0.1 * i as f64)).collect();
    if samples.windows(2).any(|w| w[1] < w[0] - 1e-12 * (1.0 + w[0].abs())) {
        return Err(Error::input("power transfer needs a nondecreasing α"));
    }
    if !inner.direction().has_backward() {
        return Err(Error::input("power transfer needs a backward linear transfer"));
    }
    Ok(Arc::new(PowerTransfer { alpha, inner, grid: default_s_grid(), cfg: AscentConfig::default() }))
}

impl PowerTransfer {
    pub fn with_grid(mut self: Arc<Self>, grid: Vec<f64>) -> Result<Arc<Self>> {
        if grid.is_empty() || grid.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::input("s-grid must be nonempty and positive"));
        }
        Arc::make_mut(&mut self).grid = grid;
        Ok(self)
    }

    pub fn inner(&self) -> &TransferHandle {
        &self.inner
    }

    fn scaled_op(&self, s: f64, g: &[f64]) -> Result<OpValue> {
        let h: Vec<f64> = g.iter().map(|v| v / s).collect();
        self.inner.backward(&h)
    }
}

impl ConvexTransfer for PowerTransfer {
    fn name(&self) -> String {
        format!("power of {}", self.inner.name())
    }

    fn source(&self) -> &Arc<FiniteSpace> {
        self.inner.source()
    }

    fn target(&self) -> &Arc<FiniteSpace> {
        self.inner.target()
    }

    /// α is applied to the positive part of 𝓣, which is what the family
    /// sup_s s𝓣 − α⊕(s) produces for nondecreasing α.
    fn eval_grad_nu(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<(f64, Vec<f64>)> {
        check_pair(self.inner.as_ref(), mu, nu)?;
        let m = minorant(self.inner.as_ref(), mu, nu, &self.cfg)?;
        if !m.value.is_finite() {
            return Ok((m.value, vec![0.0; nu.len()]));
        }
        let t = m.value.max(0.0);
        let slope = if m.value > 0.0 { self.alpha.deriv(t) } else { 0.0 };
        Ok((self.alpha.eval(t), m.d_nu.iter().map(|d| slope * d).collect()))
    }

    /// inf_{s>0} s⟨T⁻(g/s), μ⟩ + α⊕(s), convex in s (perspective plus a
    /// convex function), by golden section.
    fn conj_mu(&self, mu: &ProbMeasure, g: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_space(self.source(), mu.space())?;
        let phi = |s: f64| match self.scaled_op(s, g) {
            Ok(op) => s * mu.integrate(&op.values) + self.alpha.conj_inc(s),
            Err(_) => f64::INFINITY,
        };
        let mut hi = 1.0;
        while hi < 1e12 && phi(2.0 * hi) < phi(hi) {
            hi *= 2.0;
        }
        let (s, v) = golden_max(|s| -phi(s), 1e-12, 2.0 * hi, 1e-14);
        if !v.is_finite() {
            return Err(Error::domain("power transfer conjugate is not finite"));
        }
        // A subgradient needs zero s-derivative; at a kink in s the two
        // one-sided rows are mixed so that it cancels.
        let side = |t: f64| -> Result<(Vec<f64>, f64)> {
            let op = self.scaled_op(t, g)?;
            let rho = op.weighted_rows(mu.weights());
            let h: Vec<f64> = g.iter().map(|v| v / t).collect();
            let ds =
                mu.integrate(&op.values) - rho.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>() + self.alpha.conj_inc_argmax(t);
            Ok((rho, ds))
        };
        let (lo, hi) = (side(s * (1.0 - 1e-7))?, side(s * (1.0 + 1e-7))?);
        let lambda = if lo.1 < 0.0 && hi.1 > 0.0 {
            hi.1 / (hi.1 - lo.1)
        } else if lo.1 >= 0.0 {
            1.0
        } else {
            0.0
        };
        let grad = lo.0.iter().zip(&hi.0).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
        Ok((-v, grad))
    }

    fn index_grid(&self) -> Vec<f64> {
        self.grid.clone()
    }

    fn member(&self, s: f64, g: &[f64]) -> Result<OpValue> {
        if !(s > 0.0) {
            return Err(Error::input("power family index must be positive"));
        }
        let op = self.scaled_op(s, g)?;
        let shift = self.alpha.conj_inc(s);
        let values = op.values.iter().map(|v| s * v + shift).collect();
        Ok(OpValue::new(values, op.jacobian, op.cols))
    }

    /// The member dual is s·𝓣 − α⊕(s) after the substitution g = s g′.
    fn member_dual(&self, s: f64, mu: &ProbMeasure, nu: &ProbMeasure, cfg: &AscentConfig) -> Result<f64> {
        let d = backward_dual(self.inner.as_ref(), mu, nu, cfg)?.value;
        Ok(s * d - self.alpha.conj_inc(s))
    }
}

/// 𝓔 ⋆ 𝓣 for an entropic 𝓔 and a backward linear 𝓣. Its partial conjugate
/// is 𝓔*_μ(T⁻g) and its operator E⁻∘T⁻.
#[derive(Debug, Clone)]
pub struct EntropicConvolution {
    e: EntropicHandle,
    t: TransferHandle,
    cfg: AscentConfig,
}

pub fn entropic_convolve(e: EntropicHandle, t: TransferHandle) -> Result<Arc<EntropicConvolution>> {
    check_space(e.target(), t.source())?;
    if !t.direction().has_backward() {
        return Err(Error::input("entropic convolution needs a backward linear transfer"));
    }
    Ok(Arc::new(EntropicConvolution { e, t, cfg: AscentConfig::default() }))
}

impl EntropicConvolution {
    pub fn parts(&self) -> (&EntropicHandle, &TransferHandle) {
        (&self.e, &self.t)
    }

    /// The minimizing σ with the value.
    pub fn primal(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<super::SigmaMin> {
        min_over_sigma(self.e.as_ref(), self.t.as_ref(), mu, nu, &self.cfg)
    }
}

impl ConvexTransfer for EntropicConvolution {
    fn name(&self) -> String {
        format!("{} ⋆ {}", self.e.name(), self.t.name())
    }

    fn source(&self) -> &Arc<FiniteSpace> {
        self.e.source()
    }

    fn target(&self) -> &Arc<FiniteSpace> {
        self.t.target()
    }

    fn eval_grad_nu(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<(f64, Vec<f64>)> {
        let p = self.primal(mu, nu)?;
        Ok((p.value, p.grad_nu))
    }

    fn conj_mu(&self, mu: &ProbMeasure, g: &[f64]) -> Result<(f64, Vec<f64>)> {
        let op = self.t.backward(g)?;
        let (v, ge) = self.e.conj_mu(mu, &op.values)?;
        Ok((v, op.weighted_rows(&ge)))
    }

    fn index_grid(&self) -> Vec<f64> {
        default_s_grid()
    }

    fn member(&self, s: f64, g: &[f64]) -> Result<OpValue> {
        entropic_member(self.kop(g)?, s)
    }
}

impl Entropic for EntropicConvolution {
    fn kop(&self, g: &[f64]) -> Result<OpValue> {
        let inner = self.t.backward(g)?;
        let outer = self.e.kop(&inner.values)?;
        let jac = outer.compose_jacobian(&inner);
        Ok(OpValue::new(outer.values, jac, inner.cols))
    }
}

impl EntropicConvolution {
    /// log ⟨E⁻T⁻g, μ⟩ through the composed operator, which must agree with
    /// the conjugate.
    pub fn conj_via_operator(&self, mu: &ProbMeasure, g: &[f64]) -> Result<(f64, Vec<f64>)> {
        log_conj(&self.kop(g)?, mu)
    }
}

/// 𝓕 ⋆ 𝓣 for a backward convex 𝓕 and a backward linear 𝓣, with members
/// F_i⁻∘T⁻.
#[derive(Debug, Clone)]
pub struct ConvexConvolution {
    f: ConvexHandle,
    t: TransferHandle,
    cfg: AscentConfig,
}

pub fn convex_convolve(f: ConvexHandle, t: TransferHandle) -> Result<Arc<ConvexConvolution>> {
    check_space(f.target(), t.source())?;
    if !t.direction().has_backward() {
        return Err(Error::input("convex convolution needs a backward linear transfer"));
    }
    Ok(Arc::new(ConvexConvolution { f, t, cfg: AscentConfig::default() }))
}

impl ConvexTransfer for ConvexConvolution {
    fn name(&self) -> String {
        format!("{} ⋆ {}", self.f.name(), self.t.name())
    }

    fn source(&self) -> &Arc<FiniteSpace> {
        self.f.source()
    }

    fn target(&self) -> &Arc<FiniteSpace> {
        self.t.target()
    }

    fn eval_grad_nu(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<(f64, Vec<f64>)> {
        let p = min_over_sigma(self.f.as_ref(), self.t.as_ref(), mu, nu, &self.cfg)?;
        Ok((p.value, p.grad_nu))
    }

    fn conj_mu(&self, mu: &ProbMeasure, g: &[f64]) -> Result<(f64, Vec<f64>)> {
        let op = self.t.backward(g)?;
        let (v, gf) = self.f.conj_mu(mu, &op.values)?;
        Ok((v, op.weighted_rows(&gf)))
    }

    fn index_grid(&self) -> Vec<f64> {
        self.f.index_grid()
    }

    fn member(&self, index: f64, g: &[f64]) -> Result<OpValue> {
        let inner = self.t.backward(g)?;
        let outer = self.f.member(index, &inner.values)?;
        let jac = outer.compose_jacobian(&inner);
        Ok(OpValue::new(outer.values, jac, inner.cols))
    }
}

/// λ𝓕 for λ > 0: (λ𝓕)*_μ(g) = λ𝓕*_μ(g/λ), members λF_i⁻(g/λ).
#[derive(Debug, Clone)]
pub struct ScaledConvex {
    lambda: f64,
    inner: ConvexHandle,
}

pub fn scale_convex(lambda: f64, inner: ConvexHandle) -> Result<Arc<ScaledConvex>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::input("convex transfers scale by positive finite factors only"));
    }
    Ok(Arc::new(ScaledConvex { lambda, inner }))
}

impl ScaledConvex {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn shrink(&self, g: &[f64]) -> Vec<f64> {
        g.iter().map(|v| v / self.lambda).collect()
    }
}

impl ConvexTransfer for ScaledConvex {
    fn name(&self) -> String {
        format!("{}·({})", self.lambda, self.inner.name())
    }

    fn source(&self) -> &Arc<FiniteSpace> {
        self.inner.source()
    }

    fn target(&self) -> &Arc<FiniteSpace> {
        self.inner.target()
    }

    fn eval_grad_nu(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<(f64, Vec<f64>)> {
        let (v, g) = self.inner.eval_grad_nu(mu, nu)?;
        Ok((self.lambda * v, g.iter().map(|d| self.lambda * d).collect()))
    }

    fn support_mask(&self, mu: &ProbMeasure) -> Vec<bool> {
        self.inner.support_mask(mu)
    }

    fn conj_mu(&self, mu: &ProbMeasure, g: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (v, grad) = self.inner.conj_mu(mu, &self.shrink(g))?;
        Ok((self.lambda * v, grad))
    }

    fn index_grid(&self) -> Vec<f64> {
        self.inner.index_grid()
    }

    fn member(&self, index: f64, g: &[f64]) -> Result<OpValue> {
        let op = self.inner.member(index, &self.shrink(g))?;
        let values = op.values.iter().map(|v| self.lambda * v).collect();
        Ok(OpValue::new(values, op.jacobian, op.cols))
    }

    fn member_dual(&self, index: f64, mu: &ProbMeasure, nu: &ProbMeasure, cfg: &AscentConfig) -> Result<f64> {
        Ok(self.lambda * self.inner.member_dual(index, mu, nu, cfg)?)
    }
}
