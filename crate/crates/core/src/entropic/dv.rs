//! Donsker–Varadhan information of a reversible continuous-time chain,
//! 𝓘(μ|ν) = 𝓔(√h, √h) with h = dν/dμ and 𝓔(u,u) = −⟨Lu, u⟩_μ.
//!
//! Its partial conjugate is λ_max(L + diag f) in L²(μ), computed from the
//! symmetrization D^{1/2}(L + diag f)D^{-1/2}, D = diag μ.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::catalog::OpValue;
use crate::error::{Error, Result};
use crate::measure::{check_space, FiniteSpace, ProbMeasure};

use super::{ConvexTransfer, Entropic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorModel {
    /// L, with zero row sums and nonnegative off-diagonal rates.
    pub rates: Vec<Vec<f64>>,
    /// The stationary measure.
    pub mu: Vec<f64>,
}

impl GeneratorModel {
    pub fn validate(&self) -> Result<()> {
        let n = self.mu.len();
        if n == 0 || self.rates.len() != n || self.rates.iter().any(|r| r.len() != n) {
            return Err(Error::input("generator must be square and match the stationary measure"));
        }
        if self.mu.iter().any(|m| !(*m > 0.0)) || (self.mu.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::input("stationary measure must be a positive probability vector"));
        }
        for (x, row) in self.rates.iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) || row.iter().enumerate().any(|(y, v)| y != x && *v < 0.0) {
                return Err(Error::input("off-diagonal rates must be finite and nonnegative"));
            }
            let scale = row.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
            if row.iter().sum::<f64>().abs() > 1e-10 * scale {
                return Err(Error::input(format!("generator row {x} does not sum to zero")));
            }
        }
        for x in 0..n {
            for y in 0..x {
                let (a, b) = (self.mu[x] * self.rates[x][y], self.mu[y] * self.rates[y][x]);
                if (a - b).abs() > 1e-10 {
                    return Err(Error::input(format!("generator is not reversible at ({x},{y})")));
                }
            }
        }
        Ok(())
    }

    /// Reversible chain from symmetric conductances w(x,y) and μ: rates
    /// w(x,y)/μ(x).
    pub fn from_conductances(w: &[Vec<f64>], mu: Vec<f64>) -> Result<Self> {
        let n = mu.len();
        let mut rates = vec![vec![0.0; n]; n];
        for x in 0..n {
            for y in 0..n {
                if x != y {
                    rates[x][y] = w[x][y] / mu[x];
                }
            }
            rates[x][x] = -rates[x].iter().sum::<f64>();
        }
        let m = GeneratorModel { rates, mu };
        m.validate()?;
        Ok(m)
    }

    pub fn scaled(&self, a: f64) -> Self {
        let rates = self.rates.iter().map(|r| r.iter().map(|v| a * v).collect()).collect();
        GeneratorModel { rates, mu: self.mu.clone() }
    }

    /// D^{1/2}(L + diag f)D^{-1/2}, symmetrized against rounding.
    fn symmetrized(&self, f: &[f64]) -> DMatrix<f64> {
        let n = self.mu.len();
        let s = DMatrix::from_fn(n, n, |x, y| {
            let v = self.mu[x].sqrt() * self.rates[x][y] / self.mu[y].sqrt();
            if x == y {
                v + f[x]
            } else {
                v
            }
        });
        (&s + s.transpose()) * 0.5
    }

    /// λ_max(L + diag f) and its gradient, the squared top eigenvector.
    pub fn lambda_max(&self, f: &[f64]) -> (f64, Vec<f64>) {
        let eig = SymmetricEigen::new(self.symmetrized(f));
        let k = eig.eigenvalues.imax();
        let v = eig.eigenvectors.column(k);
        (eig.eigenvalues[k], v.iter().map(|a| a * a).collect())
    }

    /// log ‖e^{L + diag f}‖ in L²(μ), through the matrix exponential.
    pub fn log_semigroup_norm(&self, f: &[f64]) -> f64 {
        let e = self.symmetrized(f).exp();
        let e = (&e + e.transpose()) * 0.5;
        SymmetricEigen::new(e).eigenvalues.max().ln()
    }

    /// 𝓔(u,u) = ½ Σ μ(x) L(x,y) (u(y) − u(x))², nonnegative by construction.
    pub fn dirichlet_form(&self, u: &[f64]) -> f64 {
        let n = self.mu.len();
        let mut s = 0.0;
        for x in 0..n {
            for y in 0..n {
                if x != y {
                    s += self.mu[x] * self.rates[x][y] * (u[y] - u[x]).powi(2);
                }
            }
        }
        0.5 * s
    }
}

#[derive(Debug, Clone)]
pub struct DonskerVaradhan {
    space: Arc<FiniteSpace>,
    model: GeneratorModel,
}

pub fn donsker_varadhan(space: Arc<FiniteSpace>, model: GeneratorModel) -> Result<Arc<DonskerVaradhan>> {
    model.validate()?;
    if model.mu.len() != space.len() {
        return Err(Error::input("generator size does not match the space"));
    }
    Ok(Arc::new(DonskerVaradhan { space, model }))
}

impl DonskerVaradhan {
    pub fn model(&self) -> &GeneratorModel {
        &self.model
    }

    pub fn stationary(&self) -> ProbMeasure {
        ProbMeasure::from_unnormalized(self.space.clone(), self.model.mu.clone()).expect("validated stationary measure")
    }

    /// The information is anchored at the stationary measure.
    fn check_anchor(&self, mu: &ProbMeasure) -> Result<()> {
        check_space(&self.space, mu.space())?;
        if mu.weights().iter().zip(&self.model.mu).any(|(a, b)| (a - b).abs() > 1e-10) {
            return Err(Error::input("Donsker–Varadhan information is defined at the stationary measure only"));
        }
        Ok(())
    }
}

impl ConvexTransfer for DonskerVaradhan {
    fn name(&self) -> String {
        "Donsker–Varadhan information".into()
    }

    fn source(&self) -> &Arc<FiniteSpace> {
        &self.space
    }

    fn target(&self) -> &Arc<FiniteSpace> {
        &self.space
    }

    fn eval_grad_nu(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<(f64, Vec<f64>)> {
        self.check_anchor(mu)?;
        check_space(&self.space, nu.space())?;
        let r: Vec<f64> = nu.weights().iter().zip(&self.model.mu).map(|(n, m)| (n / m).sqrt()).collect();
        let value = self.model.dirichlet_form(&r);
        // ∂/∂ν(x) = −(L r)(x) / r(x)
        let n = r.len();
        let grad = (0..n)
            .map(|x| {
                let lr: f64 = (0..n).map(|y| self.model.rates[x][y] * r[y]).sum();
                if r[x] > 0.0 {
                    -lr / r[x]
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        Ok((value, grad))
    }

    fn conj_mu(&self, mu: &ProbMeasure, f: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_anchor(mu)?;
        Ok(self.model.lambda_max(f))
    }

    fn index_grid(&self) -> Vec<f64> {
        Vec::new()
    }

    fn member(&self, _index: f64, _g: &[f64]) -> Result<OpValue> {
        Err(Error::domain("the Donsker–Varadhan family is indexed by L² functions and is not discretized"))
    }
}

impl Entropic for DonskerVaradhan {
    fn kop(&self, _g: &[f64]) -> Result<OpValue> {
        Err(Error::domain("the Donsker–Varadhan conjugate is a spectral radius, not a pointwise operator"))
    }
}
