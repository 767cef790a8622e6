//! Weak transports: costs c(x, πₓ) that depend on the whole row kernel.
//!
//! The primal min over couplings of Σₓ μ(x) c(x, πₓ) is solved with a
//! multi-cut Kelley method over the coupling polytope. In the coupling
//! variables P(x,·) = μ(x) πₓ the part for row x is μ(x) c(x, P(x,·)/μ(x)),
//! whose subgradient in P(x,·) is the oracle's subgradient in σ.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::catalog::{check_len, check_pair, Direction, OpValue, Transfer, TransferHandle};
use crate::error::{Error, Result};
use crate::measure::{CostMatrix, FiniteSpace, ProbMeasure, INF_COST};
use crate::par::{map_range, Execution};
use crate::scalar::ScalarFn;
use crate::solvers::ascent::{max_over_simplex, AscentConfig};
use crate::solvers::envelope::{concave_envelope_1d, EnvelopeResult};
use crate::solvers::kelley::{CuttingPlaneMaster, Polytope};
use crate::solvers::lp::{Cmp, LpBuilder};
use crate::solvers::transport::transport_raw;

/// (x, σ) ↦ (c(x,σ), subgradient in σ).
pub type CostOracle = Arc<dyn Fn(usize, &[f64]) -> (f64, Vec<f64>) + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakOtConfig {
    pub max_iters: usize,
    /// Relative gap at which the primal solve stops.
    pub tol: f64,
    /// Used for the operator's per-point maximization.
    pub ascent: AscentConfig,
    pub execution: Execution,
}

impl Default for WeakOtConfig {
    fn default() -> Self {
        WeakOtConfig { max_iters: 3000, tol: 1e-10, ascent: AscentConfig::default(), execution: Execution::default() }
    }
}

/// Result of the cutting-plane primal solve.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakPrimal {
    /// Best value found at a feasible coupling (upper bound).
    pub value: f64,
    /// Certified lower bound from the master problem.
    pub lower_bound: f64,
    pub coupling: Vec<f64>,
    pub iterations: usize,
}

fn finite_grad(v: f64, g: &[f64]) -> bool {
    v.is_finite() && g.iter().all(|x| x.is_finite())
}

/// min over couplings of Σₓ μ(x) c(x, πₓ), optionally restricted to the
/// cells marked in `allowed` (row-major, |X|·|Y|).
pub fn weak_primal(
    mu: &ProbMeasure,
    nu: &ProbMeasure,
    oracle: &(dyn Fn(usize, &[f64]) -> (f64, Vec<f64>) + Sync),
    allowed: Option<&[bool]>,
    cfg: &WeakOtConfig,
) -> Result<WeakPrimal> {
    let (n, m) = (mu.len(), nu.len());
    let rows: Vec<usize> = mu.support().collect();
    let r = rows.len();
    let dim = r * m;
    // a feasible start: the product, or any plan on the allowed cells
    let product: Vec<f64> = match allowed {
        None => rows.iter().flat_map(|&x| nu.weights().iter().map(move |w| mu.weights()[x] * w)).collect(),
        Some(mask) => {
            let c: Vec<f64> =
                rows.iter().flat_map(|&x| (0..m).map(move |y| if mask[x * m + y] { 0.0 } else { INF_COST })).collect();
            let a: Vec<f64> = rows.iter().map(|&x| mu.weights()[x]).collect();
            match transport_raw(&c, &a, nu.weights()) {
                Ok(raw) => raw.plan,
                Err(Error::Infeasible(_)) => {
                    return Ok(WeakPrimal { value: f64::INFINITY, lower_bound: f64::INFINITY, coupling: vec![], iterations: 0 })
                }
                Err(e) => return Err(e),
            }
        }
    };
    let mut eq = Vec::with_capacity(r + m);
    for (k, &x) in rows.iter().enumerate() {
        let mut e = vec![0.0; dim];
        e[k * m..(k + 1) * m].iter_mut().for_each(|v| *v = 1.0);
        eq.push((e, mu.weights()[x]));
    }
    // the last column constraint is implied by the others
    for y in 0..m.saturating_sub(1) {
        let mut e = vec![0.0; dim];
        (0..r).for_each(|k| e[k * m + y] = 1.0);
        eq.push((e, nu.weights()[y]));
    }
    if let Some(mask) = allowed {
        for (k, &x) in rows.iter().enumerate() {
            for y in (0..m).filter(|&y| !mask[x * m + y]) {
                let mut e = vec![0.0; dim];
                e[k * m + y] = 1.0;
                eq.push((e, 0.0));
            }
        }
    }
    let le = (0..dim)
        .map(|i| {
            let mut g = vec![0.0; dim];
            g[i] = -1.0;
            (g, 0.0)
        })
        .collect();
    let mut master = CuttingPlaneMaster::new(r, &Polytope { dim, eq, le });
    // evaluates every part at a coupling, nudging toward the product if needed
    let evaluate = |p: &[f64]| -> Option<(Vec<f64>, Vec<(f64, Vec<f64>)>)> {
        for eps in [0.0, 1e-12, 1e-9, 1e-6, 1e-3] {
            let q: Vec<f64> = p.iter().zip(&product).map(|(a, b)| ((1.0 - eps) * a + eps * b).max(0.0)).collect();
            let parts: Vec<(f64, Vec<f64>)> = map_range(cfg.execution, r, |k| {
                let x = rows[k];
                let row = &q[k * m..(k + 1) * m];
                let s: f64 = row.iter().sum();
                let sigma: Vec<f64> = row.iter().map(|v| v / s).collect();
                let (c, g) = oracle(x, &sigma);
                (mu.weights()[x] * c, g)
            });
            if parts.iter().all(|(v, g)| finite_grad(*v, g)) {
                return Some((q, parts));
            }
        }
        None
    };

    let mut best = (f64::INFINITY, product.clone());
    let mut lb = f64::NEG_INFINITY;
    let mut p = product.clone();
    let mut iterations = 0;
    for it in 0..cfg.max_iters {
        iterations = it + 1;
        let Some((q, parts)) = evaluate(&p) else {
            return Err(Error::domain("weak cost is not finite near the current coupling"));
        };
        let total: f64 = parts.iter().map(|(v, _)| v).sum();
        if total < best.0 {
            best = (total, q.clone());
        }
        for (k, (v, g)) in parts.iter().enumerate() {
            let mut slope = vec![0.0; dim];
            slope[k * m..(k + 1) * m].copy_from_slice(g);
            master.add_cut_at(k, &q, *v, &slope);
        }
        let sol = master.solve()?;
        lb = lb.max(sol.value);
        if best.0 - lb <= cfg.tol * (1.0 + best.0.abs()) {
            break;
        }
        p = sol.x;
    }
    let mut coupling = vec![0.0; n * m];
    for (k, &x) in rows.iter().enumerate() {
        coupling[x * m..(x + 1) * m].copy_from_slice(&best.1[k * m..(k + 1) * m]);
    }
    if best.0 - lb > 1e3 * cfg.tol * (1.0 + best.0.abs()) {
        return Err(Error::NonConvergence {
            iterations,
            detail: format!("weak transport gap {} after {iterations} cuts", best.0 - lb),
        });
    }
    Ok(WeakPrimal { value: best.0, lower_bound: lb, coupling, iterations })
}

/// A transfer given by a generic weak cost oracle.
#[derive(Clone)]
pub struct WeakOt {
    source: Arc<FiniteSpace>,
    target: Arc<FiniteSpace>,
    oracle: CostOracle,
    allowed: Option<Arc<Vec<bool>>>,
    cfg: WeakOtConfig,
}

impl std::fmt::Debug for WeakOt {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WeakOt").field("source", &self.source.id()).field("target", &self.target.id()).finish()
    }
}

/// Spot-checks convexity of σ ↦ c(x,σ) at seeded random midpoints.
fn check_oracle_convexity(n: usize, m: usize, oracle: &CostOracle, allowed: Option<&[bool]>, seed: u64) -> Result<()> {
    let mut r = crate::rng::stream(seed, 0xc0);
    for x in 0..n {
        let cells: Vec<usize> = (0..m).filter(|&y| allowed.map_or(true, |a| a[x * m + y])).collect();
        if cells.is_empty() {
            continue;
        }
        let draw = |r: &mut rand_chacha::ChaCha8Rng| {
            let p = crate::rng::simplex_point(r, cells.len());
            let mut s = vec![0.0; m];
            cells.iter().zip(p).for_each(|(&y, v)| s[y] = v);
            s
        };
        for _ in 0..20 {
            let a = draw(&mut r);
            let b = draw(&mut r);
            let mid: Vec<f64> = a.iter().zip(&b).map(|(u, v)| 0.5 * (u + v)).collect();
            let (fa, fb, fm) = (oracle(x, &a).0, oracle(x, &b).0, oracle(x, &mid).0);
            if fm > 0.5 * (fa + fb) + 1e-9 * (1.0 + fm.abs()) {
                return Err(Error::input(format!(
                    "weak cost is not convex in σ at row {x}: midpoint {fm} above chord {}",
                    0.5 * (fa + fb)
                )));
            }
        }
    }
    Ok(())
}

pub fn weak_ot_transfer(
    source: Arc<FiniteSpace>,
    target: Arc<FiniteSpace>,
    oracle: CostOracle,
    cfg: WeakOtConfig,
) -> Result<TransferHandle> {
    weak_ot_transfer_masked(source, target, oracle, None, cfg)
}

/// Weak transport restricted to the cells marked in `allowed`.
pub fn weak_ot_transfer_masked(
    source: Arc<FiniteSpace>,
    target: Arc<FiniteSpace>,
    oracle: CostOracle,
    allowed: Option<Vec<bool>>,
    cfg: WeakOtConfig,
) -> Result<TransferHandle> {
    let (n, m) = (source.len(), target.len());
    if let Some(a) = &allowed {
        if a.len() != n * m {
            return Err(Error::input(format!("mask has {} cells, expected {}", a.len(), n * m)));
        }
        if (0..n).any(|x| !a[x * m..(x + 1) * m].iter().any(|v| *v)) {
            return Err(Error::input("every source point needs an allowed target"));
        }
    }
    check_oracle_convexity(n, m, &oracle, allowed.as_deref(), cfg.ascent.seed)?;
    Ok(Arc::new(WeakOt { source, target, oracle, allowed: allowed.map(Arc::new), cfg }))
}

impl WeakOt {
    pub fn primal(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<WeakPrimal> {
        check_pair(self, mu, nu)?;
        weak_primal(mu, nu, self.oracle.as_ref(), self.allowed.as_deref().map(|v| v.as_slice()), &self.cfg)
    }
}

impl Transfer for WeakOt {
    fn name(&self) -> String {
        "weak_ot".into()
    }

    fn direction(&self) -> Direction {
        Direction::Backward
    }

    fn source(&self) -> &Arc<FiniteSpace> {
        &self.source
    }

    fn target(&self) -> &Arc<FiniteSpace> {
        &self.target
    }

    fn dirac_domain(&self) -> bool {
        true
    }

    fn eval(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<f64> {
        Ok(self.primal(mu, nu)?.value)
    }

    fn dirac_row(&self, x: usize, sigma: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_len("kernel", sigma, self.target.len())?;
        Ok((self.oracle)(x, sigma))
    }

    /// T⁻g(x) = max over σ of ⟨g,σ⟩ − c(x,σ).
    fn backward(&self, g: &[f64]) -> Result<OpValue> {
        let m = self.target.len();
        check_len("potential", g, m)?;
        let rows = map_range(self.cfg.execution, self.source.len(), |x| {
            let cells: Vec<usize> = match &self.allowed {
                None => (0..m).collect(),
                Some(a) => (0..m).filter(|&y| a[x * m + y]).collect(),
            };
            let embed = |p: &[f64]| {
                let mut s = vec![0.0; m];
                cells.iter().zip(p).for_each(|(&y, v)| s[y] = *v);
                s
            };
            let obj = |p: &[f64]| {
                let s = embed(p);
                let (c, d) = (self.oracle)(x, &s);
                let v = s.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() - c;
                (v, cells.iter().map(|&y| g[y] - d[y]).collect())
            };
            max_over_simplex(obj, cells.len(), &self.cfg.ascent).map(|r| (r.value, embed(&r.point)))
        });
        let mut values = Vec::with_capacity(rows.len());
        let mut jac = Vec::with_capacity(rows.len() * m);
        for r in rows {
            let (v, p) = r?;
            values.push(v);
            jac.extend(p);
        }
        Ok(OpValue::new(values, jac, m))
    }
}

/// γ and d for the Marton transfer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartonParams {
    pub gamma: ScalarFn,
    pub d: CostMatrix,
}

/// min over couplings of Σₓ μ(x) γ(⟨d(x,·), πₓ⟩).
#[derive(Debug, Clone)]
pub struct Marton {
    params: MartonParams,
    cfg: WeakOtConfig,
}

pub fn marton_transfer(p: MartonParams) -> Result<TransferHandle> {
    p.gamma.validate()?;
    if p.d.has_forbidden() || p.d.min_finite().unwrap_or(0.0) < 0.0 {
        return Err(Error::input("Marton needs a finite nonnegative d"));
    }
    let hi = p.d.max_finite().unwrap_or(1.0).max(1e-9);
    if p.gamma.is_concave() || !p.gamma.check_shape(0.0, hi, 1000, 1e-9) {
        return Err(Error::input("Marton's gamma must be convex on the range of d"));
    }
    if (0..=1000).any(|i| !p.gamma.eval(hi * i as f64 / 1000.0).is_finite()) {
        return Err(Error::input("gamma must be finite on the range of d"));
    }
    Ok(Arc::new(Marton { params: p, cfg: WeakOtConfig::default() }))
}

impl Marton {
    fn cost(&self, x: usize, sigma: &[f64]) -> (f64, Vec<f64>) {
        let row = self.params.d.row(x);
        let t: f64 = row.iter().zip(sigma).map(|(a, b)| a * b).sum::<f64>().max(0.0);
        let g = &self.params.gamma;
        let slope = g.deriv(t);
        (g.eval(t), row.iter().map(|d| slope * d).collect())
    }

    /// max over t in the hull range of U(t) − γ(t), with the maximizing t.
    fn hull_max(&self, env: &EnvelopeResult) -> (f64, f64) {
        let g = &self.params.gamma;
        let obj = |t: f64| env.eval(t) - g.eval(t);
        let k = &env.knots;
        let mut best = (obj(k[0].0), k[0].0);
        for w in k.windows(2) {
            let (a, b) = (w[0], w[1]);
            let slope = (b.1 - a.1) / (b.0 - a.0);
            // concave on the segment, so the clamped unconstrained maximizer wins
            let inner = g.conj_inc_argmax(slope);
            let inner = if inner.is_finite() { inner.clamp(a.0, b.0) } else { b.0 };
            for t in [a.0, b.0, inner] {
                let v = a.1 + slope * (t - a.0) - g.eval(t);
                if v > best.0 {
                    best = (v, t);
                }
            }
        }
        best
    }
}

impl Transfer for Marton {
    fn name(&self) -> String {
        "marton".into()
    }

    fn direction(&self) -> Direction {
        Direction::Backward
    }

    fn source(&self) -> &Arc<FiniteSpace> {
        self.params.d.source()
    }

    fn target(&self) -> &Arc<FiniteSpace> {
        self.params.d.target()
    }

    fn dirac_domain(&self) -> bool {
        true
    }

    fn eval(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<f64> {
        check_pair(self, mu, nu)?;
        let oracle = |x: usize, s: &[f64]| self.cost(x, s);
        Ok(weak_primal(mu, nu, &oracle, None, &self.cfg)?.value)
    }

    fn dirac_row(&self, x: usize, sigma: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_len("kernel", sigma, self.params.d.cols())?;
        Ok(self.cost(x, sigma))
    }

    /// T⁻f(x) = max_t [Uₓ(t) − γ(t)], Uₓ the upper hull of {(d(x,y), f(y))}.
    fn backward(&self, f: &[f64]) -> Result<OpValue> {
        let d = &self.params.d;
        let m = d.cols();
        check_len("potential", f, m)?;
        let mut values = Vec::with_capacity(d.rows());
        let mut jac = vec![0.0; d.rows() * m];
        for x in 0..d.rows() {
            let pts: Vec<(f64, f64)> = (0..m).map(|y| (d.get(x, y), f[y])).collect();
            let env = concave_envelope_1d(&pts)?;
            let (v, t) = self.hull_max(&env);
            let (i, j, w) = env.bracket(t).ok_or_else(|| Error::Consistency("hull maximizer off range".into()))?;
            values.push(v);
            jac[x * m + env.sources[i]] += w;
            jac[x * m + env.sources[j]] += 1.0 - w;
        }
        Ok(OpValue::new(values, jac, m))
    }
}

/// min over couplings of Σₓ μ(x) |x − bary(πₓ)| on a 1-D grid.
#[derive(Debug, Clone)]
pub struct Barycentric {
    space: Arc<FiniteSpace>,
    coords: Vec<f64>,
}

pub fn barycentric_transfer(grid: Arc<FiniteSpace>) -> Result<TransferHandle> {
    let coords = grid.require_coords()?.to_vec();
    Ok(Arc::new(Barycentric { space: grid, coords }))
}

impl Transfer for Barycentric {
    fn name(&self) -> String {
        "barycentric".into()
    }

    fn direction(&self) -> Direction {
        Direction::Backward
    }

    fn source(&self) -> &Arc<FiniteSpace> {
        &self.space
    }

    fn target(&self) -> &Arc<FiniteSpace> {
        &self.space
    }

    fn dirac_domain(&self) -> bool {
        true
    }

    /// LP with one auxiliary uₓ ≥ |μ(x)·x − Σ_y y π(x,y)| per source point.
    fn eval(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<f64> {
        check_pair(self, mu, nu)?;
        let n = self.coords.len();
        let mut lp = LpBuilder::new();
        let p: Vec<usize> = (0..n * n).map(|_| lp.var(0.0)).collect();
        let u: Vec<usize> = (0..n).map(|_| lp.var(1.0)).collect();
        for x in 0..n {
            lp.row((0..n).map(|y| (p[x * n + y], 1.0)).collect(), Cmp::Eq, mu.weights()[x]);
            lp.row((0..n).map(|y| (p[y * n + x], 1.0)).collect(), Cmp::Eq, nu.weights()[x]);
            let xm = mu.weights()[x] * self.coords[x];
            let mut plus: Vec<(usize, f64)> = (0..n).map(|y| (p[x * n + y], -self.coords[y])).collect();
            plus.push((u[x], -1.0));
            lp.row(plus, Cmp::Le, -xm);
            let mut minus: Vec<(usize, f64)> = (0..n).map(|y| (p[x * n + y], self.coords[y])).collect();
            minus.push((u[x], -1.0));
            lp.row(minus, Cmp::Le, xm);
        }
        let sol = lp.solve()?.map_err(|s| Error::Consistency(format!("barycentric LP: {s:?}")))?;
        Ok(sol.value)
    }

    fn dirac_row(&self, x: usize, sigma: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_len("kernel", sigma, self.coords.len())?;
        let b: f64 = sigma.iter().zip(&self.coords).map(|(s, y)| s * y).sum();
        let sign = if b >= self.coords[x] { 1.0 } else { -1.0 };
        Ok(((b - self.coords[x]).abs(), self.coords.iter().map(|y| sign * y).collect()))
    }

    /// T⁻f(x) = max_b [f**(b) − |b − x|] with f** the concave envelope of f.
    fn backward(&self, f: &[f64]) -> Result<OpValue> {
        let n = self.coords.len();
        check_len("potential", f, n)?;
        let pts: Vec<(f64, f64)> = self.coords.iter().copied().zip(f.iter().copied()).collect();
        let env = concave_envelope_1d(&pts)?;
        let mut values = Vec::with_capacity(n);
        let mut jac = vec![0.0; n * n];
        for x in 0..n {
            let cx = self.coords[x];
            // concave in b: the max sits at a knot or at b = x
            let mut best = (env.eval(cx), cx);
            for &(b, v) in &env.knots {
                let val = v - (b - cx).abs();
                if val > best.0 {
                    best = (val, b);
                }
            }
            let (i, j, w) = env.bracket(best.1).ok_or_else(|| Error::Consistency("envelope off range".into()))?;
            values.push(best.0);
            jac[x * n + env.sources[i]] += w;
            jac[x * n + env.sources[j]] += 1.0 - w;
        }
        Ok(OpValue::new(values, jac, n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{backward_dual, check_backward_axioms, mk_transfer};
    use crate::rng;
    use crate::solvers::transport::solve_transport_lp;

    fn space(n: usize) -> Arc<FiniteSpace> {
        Arc::new(FiniteSpace::indexed("X", n).unwrap())
    }

    fn random_d(r: &mut impl rand::Rng, s: &Arc<FiniteSpace>) -> CostMatrix {
        let n = s.len();
        let rows = (0..n).map(|_| rng::uniform_vec(r, n, 0.0, 2.0)).collect();
        CostMatrix::from_rows(s.clone(), s.clone(), rows).unwrap()
    }

    fn measure(r: &mut impl rand::Rng, s: &Arc<FiniteSpace>) -> ProbMeasure {
        ProbMeasure::from_unnormalized(s.clone(), rng::simplex_point(r, s.len())).unwrap()
    }

    #[test]
    fn linear_gamma_is_mk() {
        let mut r = rng::stream(31, 0);
        let s = space(4);
        for _ in 0..10 {
            let d = random_d(&mut r, &s);
            let t = marton_transfer(MartonParams { gamma: ScalarFn::Identity, d: d.clone() }).unwrap();
            let (mu, nu) = (measure(&mut r, &s), measure(&mut r, &s));
            let lp = solve_transport_lp(&d, &mu, &nu).unwrap().value;
            assert!((t.eval(&mu, &nu).unwrap() - lp).abs() < 1e-9);
            // operator is the c-transform
            let g = rng::uniform_vec(&mut r, 4, -1.0, 1.0);
            let a = t.backward(&g).unwrap().values;
            let b = mk_transfer(d).backward(&g).unwrap().values;
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn constant_potential() {
        let mut r = rng::stream(32, 0);
        let s = space(4);
        let d = random_d(&mut r, &s);
        let t = marton_transfer(MartonParams { gamma: ScalarFn::power(2.0), d: d.clone() }).unwrap();
        let v = t.backward(&[1.5; 4]).unwrap().values;
        for x in 0..4 {
            let dmin = d.row(x).iter().copied().fold(f64::INFINITY, f64::min);
            assert!((v[x] - (1.5 - dmin * dmin)).abs() < 1e-14);
        }
    }

    #[test]
    fn dirac_source() {
        let mut r = rng::stream(33, 0);
        let s = space(3);
        let d = random_d(&mut r, &s);
        let t = marton_transfer(MartonParams { gamma: ScalarFn::power(2.0), d: d.clone() }).unwrap();
        let nu = measure(&mut r, &s);
        let mu = ProbMeasure::dirac_at(s.clone(), 1);
        let t1: f64 = d.row(1).iter().zip(nu.weights()).map(|(a, b)| a * b).sum();
        assert!((t.eval(&mu, &nu).unwrap() - t1 * t1).abs() < 1e-12);
    }

    /// Oracle for the hull reduction: brute force over two-point σ.
    #[test]
    fn operator_matches_two_point_search() {
        let mut r = rng::stream(34, 0);
        let s = space(4);
        let d = random_d(&mut r, &s);
        let gamma = ScalarFn::power(2.0);
        let t = marton_transfer(MartonParams { gamma: gamma.clone(), d: d.clone() }).unwrap();
        for _ in 0..10 {
            let f = rng::uniform_vec(&mut r, 4, -2.0, 2.0);
            let v = t.backward(&f).unwrap();
            for x in 0..4 {
                let mut best = f64::NEG_INFINITY;
                for a in 0..4 {
                    for b in 0..4 {
                        for k in 0..=4000 {
                            let w = k as f64 / 4000.0;
                            let tt = w * d.get(x, a) + (1.0 - w) * d.get(x, b);
                            best = best.max(w * f[a] + (1.0 - w) * f[b] - gamma.eval(tt));
                        }
                    }
                }
                assert!(v.values[x] >= best - 1e-12);
                assert!(v.values[x] - best < 1e-5);
                let sigma = v.row(x);
                let tt: f64 = sigma.iter().zip(d.row(x)).map(|(a, b)| a * b).sum();
                let direct = sigma.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>() - gamma.eval(tt);
                assert!((direct - v.values[x]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn marton_duality() {
        let mut r = rng::stream(35, 0);
        let s = space(3);
        for gamma in [ScalarFn::power(2.0), ScalarFn::Xlogx, ScalarFn::Exp] {
            let d = random_d(&mut r, &s);
            let t = marton_transfer(MartonParams { gamma, d }).unwrap();
            let (mu, nu) = (measure(&mut r, &s), measure(&mut r, &s));
            let primal = t.eval(&mu, &nu).unwrap();
            let dual = backward_dual(t.as_ref(), &mu, &nu, &AscentConfig::default()).unwrap();
            assert!((primal - dual.value).abs() < 1e-5, "{primal} vs {}", dual.value);
        }
    }

    #[test]
    fn weak_ot_reproduces_marton_and_mk() {
        let mut r = rng::stream(36, 0);
        let s = space(3);
        let d = random_d(&mut r, &s);
        let params = MartonParams { gamma: ScalarFn::power(2.0), d: d.clone() };
        let marton = marton_transfer(params.clone()).unwrap();
        let p2 = params.clone();
        let oracle: CostOracle = Arc::new(move |x, sg| {
            let t: f64 = p2.d.row(x).iter().zip(sg).map(|(a, b)| a * b).sum();
            (t * t, p2.d.row(x).iter().map(|v| 2.0 * t * v).collect())
        });
        let weak = weak_ot_transfer(s.clone(), s.clone(), oracle, WeakOtConfig::default()).unwrap();
        let (mu, nu) = (measure(&mut r, &s), measure(&mut r, &s));
        assert!((weak.eval(&mu, &nu).unwrap() - marton.eval(&mu, &nu).unwrap()).abs() < 1e-6);
        let g = rng::uniform_vec(&mut r, 3, -1.0, 1.0);
        let a = weak.backward(&g).unwrap().values;
        let b = marton.backward(&g).unwrap().values;
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-6);
        }

        let dd = d.clone();
        let linear: CostOracle = Arc::new(move |x, sg| (dd.row(x).iter().zip(sg).map(|(a, b)| a * b).sum(), dd.row(x).to_vec()));
        let weak = weak_ot_transfer(s.clone(), s.clone(), linear, WeakOtConfig::default()).unwrap();
        let lp = solve_transport_lp(&d, &mu, &nu).unwrap().value;
        assert!((weak.eval(&mu, &nu).unwrap() - lp).abs() < 1e-9);

        let zero: CostOracle = Arc::new(|_, sg| (0.0, vec![0.0; sg.len()]));
        let weak = weak_ot_transfer(s.clone(), s.clone(), zero, WeakOtConfig::default()).unwrap();
        assert_eq!(weak.eval(&mu, &nu).unwrap(), 0.0);
        let g = [0.3, -0.2, 0.9];
        for v in weak.backward(&g).unwrap().values {
            assert!((v - 0.9).abs() < 1e-10);
        }
    }

    #[test]
    fn nonconvex_oracle_rejected() {
        let s = space(3);
        let bad: CostOracle = Arc::new(|_, sg| (-sg.iter().map(|v| v * v).sum::<f64>(), sg.iter().map(|v| -2.0 * v).collect()));
        assert!(weak_ot_transfer(s.clone(), s, bad, WeakOtConfig::default()).unwrap_err().is_input());
    }

    #[test]
    fn barycentric_cases() {
        let g = Arc::new(FiniteSpace::grid("G", vec![0.0, 1.0, 2.5, 4.0]).unwrap());
        let t = barycentric_transfer(g.clone()).unwrap();
        let xs = g.coords().unwrap().to_vec();
        let mut r = rng::stream(37, 0);
        let mu = measure(&mut r, &g);
        let nu = ProbMeasure::dirac_at(g.clone(), 2);
        let expect: f64 = (0..4).map(|x| mu.weights()[x] * (xs[x] - xs[2]).abs()).sum();
        assert!((t.eval(&mu, &nu).unwrap() - expect).abs() < 1e-12);
        assert!(t.eval(&mu, &mu).unwrap().abs() < 1e-12);
        for _ in 0..5 {
            let (mu, nu) = (measure(&mut r, &g), measure(&mut r, &g));
            let primal = t.eval(&mu, &nu).unwrap();
            let dual = backward_dual(t.as_ref(), &mu, &nu, &AscentConfig::default()).unwrap();
            assert!((primal - dual.value).abs() < 1e-5, "{primal} vs {}", dual.value);
        }
    }

    #[test]
    fn axioms() {
        let mut r = rng::stream(38, 0);
        let s = space(4);
        let d = random_d(&mut r, &s);
        let m = marton_transfer(MartonParams { gamma: ScalarFn::power(2.0), d }).unwrap();
        assert!(check_backward_axioms(m.as_ref(), 100, 39, 1e-10).unwrap().passed());
        let g = Arc::new(FiniteSpace::grid("G", vec![0.0, 1.0, 2.5, 4.0]).unwrap());
        let b = barycentric_transfer(g).unwrap();
        assert!(check_backward_axioms(b.as_ref(), 100, 40, 1e-10).unwrap().passed());
    }
}
