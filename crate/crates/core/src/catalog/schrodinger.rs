//! Discrete Schrödinger bridge for a reversible Markov kernel.
//!
//! With R(x,y) = m̂(x)K(x,y), the entropy projection splits as
//! KL(π‖R) = KL(μ‖m̂) + Σₓ μ(x) KL(πₓ‖K(x,·)), so the one-sided functional
//! S_R(μ,ν) − KL(μ‖m̂) has the convex backward operator log K e^g exactly.
//! The symmetrized transfer below only inherits these operators up to the
//! ½(KL(ν‖m̂) − KL(μ‖m̂)) imbalance, which the tests measure rather than hide.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::catalog::{check_len, check_pair, Direction, OpValue, Transfer, TransferHandle};
use crate::error::{Error, Result};
use crate::measure::{kl_raw, FiniteSpace, ProbMeasure, INF_COST};
use crate::solvers::transport::transport_raw;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovKernelModel {
    pub space: Arc<FiniteSpace>,
    /// Row-stochastic, row-major.
    pub kernel: Vec<f64>,
    /// Reversing measure, positive, not necessarily normalized.
    pub m: Vec<f64>,
}

impl MarkovKernelModel {
    pub fn new(space: Arc<FiniteSpace>, kernel: Vec<Vec<f64>>, m: Vec<f64>) -> Result<Self> {
        let n = space.len();
        if kernel.len() != n || kernel.iter().any(|r| r.len() != n) || m.len() != n {
            return Err(Error::input(format!("kernel must be {n}x{n} with {n} reversing weights")));
        }
        let model = MarkovKernelModel { space, kernel: kernel.concat(), m };
        model.validate()?;
        Ok(model)
    }

    /// K(x,y) = w(x,y)/Σ_y w(x,y) with m(x) = Σ_y w(x,y); reversible when w
    /// is symmetric.
    pub fn from_symmetric_weights(space: Arc<FiniteSpace>, w: Vec<Vec<f64>>) -> Result<Self> {
        let m: Vec<f64> = w.iter().map(|r| r.iter().sum()).collect();
        let kernel = w.iter().zip(&m).map(|(r, s)| r.iter().map(|v| v / s).collect()).collect();
        Self::new(space, kernel, m)
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn k(&self, x: usize, y: usize) -> f64 {
        self.kernel[x * self.len() + y]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.kernel.len() != n * n || self.space.len() != n {
            return Err(Error::input("kernel shape does not match its space"));
        }
        if self.m.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::input("reversing measure must be positive"));
        }
        if self.kernel.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::input("kernel entries must be finite and nonnegative"));
        }
        for x in 0..n {
            let s: f64 = self.kernel[x * n..(x + 1) * n].iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::input(format!("kernel row {x} sums to {s}")));
            }
        }
        let scale = self.m.iter().sum::<f64>();
        for x in 0..n {
            for y in 0..x {
                let (a, b) = (self.m[x] * self.k(x, y), self.m[y] * self.k(y, x));
                if (a - b).abs() > 1e-10 * scale {
                    return Err(Error::input(format!("detailed balance fails at ({x},{y}): {a} vs {b}")));
                }
            }
        }
        Ok(())
    }

    /// Normalized reversing measure m̂.
    pub fn m_hat(&self) -> Vec<f64> {
        let s: f64 = self.m.iter().sum();
        self.m.iter().map(|v| v / s).collect()
    }

    /// R₀₁(x,y) = m̂(x)K(x,y), row-major.
    pub fn joint(&self) -> Vec<f64> {
        let n = self.len();
        let mh = self.m_hat();
        (0..n * n).map(|k| mh[k / n] * self.kernel[k]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornResult {
    /// KL(π‖R) at the returned plan.
    pub value: f64,
    pub plan: Vec<f64>,
    pub iterations: usize,
    /// ℓ¹ row-marginal residual (columns are exact after each sweep).
    pub residual: f64,
}

fn logsumexp(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + it.map(|v| (v - mx).exp()).sum::<f64>().ln()
}

/// min KL(π‖R) over couplings of (a, b), log-domain Sinkhorn. Zero entries
/// of R are excluded; feasibility must be checked by the caller.
pub fn sinkhorn_kl(r: &[f64], a: &[f64], b: &[f64], tol: f64, max_iters: usize) -> Result<SinkhornResult> {
    let (n, m) = (a.len(), b.len());
    let lr: Vec<f64> = r.iter().map(|v| if *v > 0.0 { v.ln() } else { f64::NEG_INFINITY }).collect();
    let (la, lb): (Vec<f64>, Vec<f64>) = (a.iter().map(|v| v.ln()).collect(), b.iter().map(|v| v.ln()).collect());
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; m];
    let mut residual = f64::INFINITY;
    for it in 1..=max_iters {
        for x in 0..n {
            u[x] = la[x] - logsumexp((0..m).map(|y| lr[x * m + y] + v[y]));
        }
        for y in 0..m {
            v[y] = lb[y] - logsumexp((0..n).map(|x| lr[x * m + y] + u[x]));
        }
        residual = (0..n).map(|x| ((0..m).map(|y| (lr[x * m + y] + u[x] + v[y]).exp()).sum::<f64>() - a[x]).abs()).sum();
        if residual <= tol {
            let plan: Vec<f64> = (0..n * m).map(|k| (lr[k] + u[k / m] + v[k % m]).exp()).collect();
            let value = kl_raw(&plan, r);
            return Ok(SinkhornResult { value, plan, iterations: it, residual });
        }
    }
    Err(Error::NonConvergence { iterations: max_iters, detail: format!("Sinkhorn residual {residual}") })
}

#[derive(Debug, Clone)]
pub struct Schrodinger {
    model: MarkovKernelModel,
}

pub fn schrodinger_transfer(model: MarkovKernelModel) -> Result<TransferHandle> {
    model.validate()?;
    Ok(Arc::new(Schrodinger { model }))
}

impl Schrodinger {
    pub fn model(&self) -> &MarkovKernelModel {
        &self.model
    }

    /// S_R(μ,ν), or +∞ when no coupling is absolutely continuous w.r.t. R.
    pub fn bridge_entropy(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<f64> {
        check_pair(self, mu, nu)?;
        let n = self.model.len();
        let rows: Vec<usize> = mu.support().collect();
        let cols: Vec<usize> = nu.support().collect();
        let joint = self.model.joint();
        let r: Vec<f64> = rows.iter().flat_map(|&x| cols.iter().map(move |&y| (x, y))).map(|(x, y)| joint[x * n + y]).collect();
        let a: Vec<f64> = rows.iter().map(|&x| mu.weights()[x]).collect();
        let b: Vec<f64> = cols.iter().map(|&y| nu.weights()[y]).collect();
        let c: Vec<f64> = r.iter().map(|v| if *v > 0.0 { 0.0 } else { INF_COST }).collect();
        match transport_raw(&c, &a, &b) {
            Err(Error::Infeasible(_)) => return Ok(f64::INFINITY),
            Err(e) => return Err(e),
            Ok(_) => {}
        }
        Ok(sinkhorn_kl(&r, &a, &b, 1e-10, 200_000)?.value)
    }

    /// log Σ_y K(x,y) e^{g(y)} and its softmax rows.
    fn log_kernel(&self, g: &[f64]) -> OpValue {
        let n = self.model.len();
        let mut values = Vec::with_capacity(n);
        let mut jac = vec![0.0; n * n];
        for x in 0..n {
            let terms = (0..n).filter(|&y| self.model.k(x, y) > 0.0).map(|y| self.model.k(x, y).ln() + g[y]);
            let lse = logsumexp(terms);
            values.push(lse);
            for y in 0..n {
                let k = self.model.k(x, y);
                if k > 0.0 {
                    jac[x * n + y] = (k.ln() + g[y] - lse).exp();
                }
            }
        }
        OpValue::new(values, jac, n)
    }
}

impl Transfer for Schrodinger {
    fn name(&self) -> String {
        "schrodinger".into()
    }

    fn direction(&self) -> Direction {
        Direction::Both
    }

    fn source(&self) -> &Arc<FiniteSpace> {
        &self.model.space
    }

    fn target(&self) -> &Arc<FiniteSpace> {
        &self.model.space
    }

    fn dirac_domain(&self) -> bool {
        false
    }

    fn eval(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<f64> {
        let s = self.bridge_entropy(mu, nu)?;
        if !s.is_finite() {
            return Ok(s);
        }
        let mh = self.model.m_hat();
        Ok(s - 0.5 * kl_raw(mu.weights(), &mh) - 0.5 * kl_raw(nu.weights(), &mh))
    }

    /// T⁻g = log K e^g.
    fn backward(&self, g: &[f64]) -> Result<OpValue> {
        check_len("potential", g, self.model.len())?;
        Ok(self.log_kernel(g))
    }

    /// T⁺f = −T⁻(−f) = −log K e^{−f}.
    fn forward(&self, f: &[f64]) -> Result<OpValue> {
        check_len("potential", f, self.model.len())?;
        let neg: Vec<f64> = f.iter().map(|v| -v).collect();
        let mut op = self.log_kernel(&neg);
        op.values.iter_mut().for_each(|v| *v = -*v);
        Ok(op)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{backward_dual, check_backward_axioms, check_forward_axioms};
    use crate::rng;
    use crate::solvers::ascent::AscentConfig;
    use rand::Rng;

    fn space(n: usize) -> Arc<FiniteSpace> {
        Arc::new(FiniteSpace::indexed("S", n).unwrap())
    }

    fn random_model(r: &mut impl Rng, n: usize, zero_prob: f64) -> MarkovKernelModel {
        let mut w = vec![vec![0.0; n]; n];
        for x in 0..n {
            w[x][x] = r.gen_range(0.1..1.0);
            for y in 0..x {
                let v = if r.gen_bool(zero_prob) { 0.0 } else { r.gen_range(0.1..1.0) };
                w[x][y] = v;
                w[y][x] = v;
            }
        }
        MarkovKernelModel::from_symmetric_weights(space(n), w).unwrap()
    }

    fn measure(r: &mut impl Rng, n: usize) -> ProbMeasure {
        ProbMeasure::from_unnormalized(space(n), rng::simplex_point(r, n)).unwrap()
    }

    #[test]
    fn validation() {
        let s = space(2);
        assert!(MarkovKernelModel::new(s.clone(), vec![vec![0.5, 0.5], vec![0.5, 0.6]], vec![1.0, 1.0]).is_err());
        // rows fine, but m(0)K(0,1) ≠ m(1)K(1,0)
        assert!(MarkovKernelModel::new(s.clone(), vec![vec![0.5, 0.5], vec![0.2, 0.8]], vec![1.0, 1.0]).is_err());
        assert!(MarkovKernelModel::new(s, vec![vec![0.5, 0.5], vec![0.2, 0.8]], vec![0.4, 1.0]).is_ok());
    }

    #[test]
    fn identity_kernel() {
        let s = space(3);
        let id = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let model = MarkovKernelModel::new(s.clone(), id, vec![1.0, 2.0, 3.0]).unwrap();
        let t = Schrodinger { model: model.clone() };
        let mu = ProbMeasure::new(s.clone(), vec![0.2, 0.5, 0.3]).unwrap();
        let kl = kl_raw(mu.weights(), &model.m_hat());
        assert!((t.bridge_entropy(&mu, &mu).unwrap() - kl).abs() < 1e-12);
        assert!(t.eval(&mu, &mu).unwrap().abs() < 1e-12);
        let nu = ProbMeasure::new(s, vec![0.3, 0.4, 0.3]).unwrap();
        assert_eq!(t.eval(&mu, &nu).unwrap(), f64::INFINITY);
    }

    #[test]
    fn zero_potential() {
        let mut r = rng::stream(41, 0);
        let t = schrodinger_transfer(random_model(&mut r, 4, 0.3)).unwrap();
        for v in t.forward(&[0.0; 4]).unwrap().values.into_iter().chain(t.backward(&[0.0; 4]).unwrap().values) {
            assert!(v.abs() < 1e-15);
        }
    }

    #[test]
    fn symmetric() {
        let mut r = rng::stream(42, 0);
        for _ in 0..20 {
            let n = r.gen_range(2..=5);
            let t = schrodinger_transfer(random_model(&mut r, n, 0.3)).unwrap();
            let (mu, nu) = (measure(&mut r, n), measure(&mut r, n));
            let (a, b) = (t.eval(&mu, &nu).unwrap(), t.eval(&nu, &mu).unwrap());
            assert!(a == b || (a - b).abs() <= 1e-8, "{a} vs {b}");
        }
    }

    /// The dual with log K e^g recovers S_R − KL(μ‖m̂), not the
    /// symmetrized value; both are checked so the imbalance stays visible.
    #[test]
    fn one_sided_duality() {
        let mut r = rng::stream(43, 0);
        let mut imbalance: f64 = 0.0;
        for _ in 0..5 {
            let t = Schrodinger { model: random_model(&mut r, 3, 0.0) };
            let (mu, nu) = (measure(&mut r, 3), measure(&mut r, 3));
            let mh = t.model.m_hat();
            let one_sided = t.bridge_entropy(&mu, &nu).unwrap() - kl_raw(mu.weights(), &mh);
            let dual = backward_dual(&t, &mu, &nu, &AscentConfig::default()).unwrap();
            assert!((dual.value - one_sided).abs() < 1e-6, "{} vs {one_sided}", dual.value);
            let sym = t.eval(&mu, &nu).unwrap();
            let half = 0.5 * (kl_raw(nu.weights(), &mh) - kl_raw(mu.weights(), &mh));
            assert!((one_sided - sym - half).abs() < 1e-9);
            imbalance = imbalance.max(half.abs());
        }
        assert!(imbalance > 1e-3);
    }

    #[test]
    fn axioms() {
        let mut r = rng::stream(44, 0);
        let t = schrodinger_transfer(random_model(&mut r, 4, 0.3)).unwrap();
        assert!(check_backward_axioms(t.as_ref(), 100, 45, 1e-10).unwrap().passed());
        assert!(check_forward_axioms(t.as_ref(), 100, 46, 1e-10).unwrap().passed());
    }
}
