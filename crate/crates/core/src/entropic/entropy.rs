//! Generalized entropies Σ μ α(ν/μ) and the logarithmic entropy KL(ν‖μ).

use std::sync::Arc;

use crate::catalog::OpValue;
use crate::error::{Error, Result};
use crate::measure::{check_space, kl_raw, FiniteSpace, ProbMeasure};
use crate::scalar::ScalarFn;

use super::{default_s_grid, entropic_member, ConvexTransfer, Entropic};

/// 𝓣_α(μ,ν) = Σ μ α(ν/μ), +∞ unless ν ≪ μ. The partial conjugate is
/// inf_t Σ μ [α⊕(f + t) − t] and the members are f ↦ α⊕(f + t) − t.
#[derive(Debug, Clone)]
pub struct GeneralizedEntropy {
    space: Arc<FiniteSpace>,
    alpha: ScalarFn,
}

/// α must be convex, finite at 1 and superlinear (α⊕ finite everywhere).
pub fn generalized_entropy(space: Arc<FiniteSpace>, alpha: ScalarFn) -> Result<Arc<GeneralizedEntropy>> {
    alpha.validate()?;
    if alpha.is_concave() || !alpha.check_shape(0.0, 10.0, 1000, 1e-9) {
        return Err(Error::input("generalized entropy needs a convex α"));
    }
    if !alpha.eval(1.0).is_finite() || [-50.0, 0.0, 50.0].iter().any(|&t| !alpha.conj_inc(t).is_finite()) {
        return Err(Error::input("generalized entropy needs a superlinear α finite near 1"));
    }
    Ok(Arc::new(GeneralizedEntropy { space, alpha }))
}

impl GeneralizedEntropy {
    pub fn alpha(&self) -> &ScalarFn {
        &self.alpha
    }

    /// The minimizing t in inf_t Σ μ [α⊕(f + t) − t], by bisection on the
    /// nondecreasing derivative Σ μ α⊕′(f + t) − 1.
    pub fn optimal_shift(&self, mu: &ProbMeasure, f: &[f64]) -> f64 {
        let slope = |t: f64| -> f64 {
            mu.weights().iter().zip(f).filter(|(m, _)| **m > 0.0).map(|(m, v)| m * self.alpha.conj_inc_argmax(v + t)).sum::<f64>()
                - 1.0
        };
        let (fmin, fmax) = f.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        let (mut lo, mut hi) = (-fmax - 1.0, -fmin + 1.0);
        while slope(lo) > 0.0 {
            lo -= 2.0 * (hi - lo);
        }
        while slope(hi) < 0.0 {
            hi += 2.0 * (hi - lo);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if slope(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

impl ConvexTransfer for GeneralizedEntropy {
    fn name(&self) -> String {
        "generalized entropy".into()
    }

    fn source(&self) -> &Arc<FiniteSpace> {
        &self.space
    }

    fn target(&self) -> &Arc<FiniteSpace> {
        &self.space
    }

    fn eval_grad_nu(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<(f64, Vec<f64>)> {
        check_space(&self.space, mu.space())?;
        check_space(&self.space, nu.space())?;
        let mut value = 0.0;
        let mut grad = vec![0.0; nu.len()];
        for (x, (m, n)) in mu.weights().iter().zip(nu.weights()).enumerate() {
            if *m > 0.0 {
                value += m * self.alpha.eval(n / m);
                grad[x] = self.alpha.deriv(n / m);
            } else if *n > 0.0 {
                return Ok((f64::INFINITY, grad));
            }
        }
        Ok((value, grad))
    }

    fn support_mask(&self, mu: &ProbMeasure) -> Vec<bool> {
        mu.weights().iter().map(|m| *m > 0.0).collect()
    }

    fn conj_mu(&self, mu: &ProbMeasure, f: &[f64]) -> Result<(f64, Vec<f64>)> {
        let t = self.optimal_shift(mu, f);
        let mut value = 0.0;
        let mut grad = vec![0.0; f.len()];
        for (x, m) in mu.weights().iter().enumerate() {
            if *m > 0.0 {
                value += m * (self.alpha.conj_inc(f[x] + t) - t);
                grad[x] = m * self.alpha.conj_inc_argmax(f[x] + t);
            }
        }
        Ok((value, grad))
    }

    fn index_grid(&self) -> Vec<f64> {
        (-8..=8).map(|k| 0.5 * k as f64).collect()
    }

    fn member(&self, t: f64, f: &[f64]) -> Result<OpValue> {
        let n = f.len();
        let mut jac = vec![0.0; n * n];
        let values = f
            .iter()
            .enumerate()
            .map(|(x, v)| {
                jac[x * n + x] = self.alpha.conj_inc_argmax(v + t);
                self.alpha.conj_inc(v + t) - t
            })
            .collect();
        Ok(OpValue::new(values, jac, n))
    }
}

/// 𝓗(μ,ν) = KL(ν‖μ), the log-transfer with E⁻f = eᶠ.
#[derive(Debug, Clone)]
pub struct LogEntropy {
    space: Arc<FiniteSpace>,
}

pub fn log_entropy(space: Arc<FiniteSpace>) -> Arc<LogEntropy> {
    Arc::new(LogEntropy { space })
}

impl LogEntropy {
    /// f* = log(ν/μ) on the support of ν, −∞ off it.
    pub fn witness(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<Vec<f64>> {
        check_space(&self.space, mu.space())?;
        check_space(&self.space, nu.space())?;
        if !nu.abs_continuous_wrt(mu) {
            return Err(Error::domain("no witness: ν is not absolutely continuous with respect to μ"));
        }
        Ok(mu.weights().iter().zip(nu.weights()).map(|(m, n)| if *n > 0.0 { (n / m).ln() } else { f64::NEG_INFINITY }).collect())
    }

    /// ⟨f,ν⟩ − log ⟨eᶠ,μ⟩, with 0·(−∞) = 0.
    pub fn dual_objective(&self, mu: &ProbMeasure, nu: &ProbMeasure, f: &[f64]) -> f64 {
        let lin: f64 = nu.weights().iter().zip(f).filter(|(n, _)| **n > 0.0).map(|(n, v)| n * v).sum();
        let mass: f64 = mu.weights().iter().zip(f).filter(|(m, _)| **m > 0.0).map(|(m, v)| m * v.exp()).sum();
        lin - mass.ln()
    }
}

impl ConvexTransfer for LogEntropy {
    fn name(&self) -> String {
        "log entropy".into()
    }

    fn source(&self) -> &Arc<FiniteSpace> {
        &self.space
    }

    fn target(&self) -> &Arc<FiniteSpace> {
        &self.space
    }

    fn eval_grad_nu(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<(f64, Vec<f64>)> {
        check_space(&self.space, mu.space())?;
        check_space(&self.space, nu.space())?;
        let value = kl_raw(nu.weights(), mu.weights());
        let grad = mu.weights().iter().zip(nu.weights()).map(|(m, n)| if *m > 0.0 { (n / m).ln() + 1.0 } else { 0.0 }).collect();
        Ok((value, grad))
    }

    fn support_mask(&self, mu: &ProbMeasure) -> Vec<bool> {
        mu.weights().iter().map(|m| *m > 0.0).collect()
    }

    /// log ⟨eᶠ, μ⟩, shifted by max f against overflow.
    fn conj_mu(&self, mu: &ProbMeasure, f: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_space(&self.space, mu.space())?;
        let top = mu.weights().iter().zip(f).filter(|(m, _)| **m > 0.0).fold(f64::NEG_INFINITY, |a, (_, v)| a.max(*v));
        let w: Vec<f64> = mu.weights().iter().zip(f).map(|(m, v)| if *m > 0.0 { m * (v - top).exp() } else { 0.0 }).collect();
        let z: f64 = w.iter().sum();
        Ok((top + z.ln(), w.iter().map(|v| v / z).collect()))
    }

    fn index_grid(&self) -> Vec<f64> {
        default_s_grid()
    }

    fn member(&self, s: f64, f: &[f64]) -> Result<OpValue> {
        entropic_member(self.kop(f)?, s)
    }
}

impl Entropic for LogEntropy {
    fn kop(&self, f: &[f64]) -> Result<OpValue> {
        let n = f.len();
        let values: Vec<f64> = f.iter().map(|v| v.exp()).collect();
        let mut jac = vec![0.0; n * n];
        for (x, v) in values.iter().enumerate() {
            jac[x * n + x] = *v;
        }
        Ok(OpValue::new(values, jac, n))
    }
}
