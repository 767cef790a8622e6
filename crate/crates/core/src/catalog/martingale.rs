//! Martingale transport on a 1-D grid.
//!
//! The backward operator is T⁻f(x) = sup{⟨f − c(x,·), σ⟩ : bary(σ) = x},
//! which is the upper concave envelope of y ↦ f(y) − c(x,y) evaluated at x.
//! It is computed for every grid point, including those outside the support
//! of whatever μ it is later paired with.

use std::sync::Arc;

use crate::catalog::{check_len, check_pair, Direction, OpValue, Transfer, TransferHandle};
use crate::error::{Error, Result};
use crate::measure::{is_forbidden, CostMatrix, FiniteSpace, ProbMeasure};
use crate::solvers::envelope::concave_envelope_1d;
use crate::solvers::lp::{Cmp, LpBuilder};

#[derive(Debug, Clone)]
pub struct Martingale {
    cost: CostMatrix,
    coords: Vec<f64>,
}

pub fn martingale_transfer(c: CostMatrix) -> Result<TransferHandle> {
    if !c.is_square() {
        return Err(Error::input("martingale transport needs a square cost on one grid"));
    }
    let coords = c.source().require_coords()?.to_vec();
    Ok(Arc::new(Martingale { cost: c, coords }))
}

/// μ ≼ ν in convex order on a line: equal means and
/// ∫(x − k)⁺dμ ≤ ∫(x − k)⁺dν at every grid point k.
pub fn convex_order(mu: &ProbMeasure, nu: &ProbMeasure, tol: f64) -> Result<bool> {
    crate::measure::check_space(mu.space(), nu.space())?;
    let xs = mu.space().require_coords()?;
    let scale = xs.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    if (mu.mean()? - nu.mean()?).abs() > tol * scale {
        return Ok(false);
    }
    for &k in xs {
        let call = |m: &ProbMeasure| m.integrate(&xs.iter().map(|x| (x - k).max(0.0)).collect::<Vec<_>>());
        if call(mu) > call(nu) + tol * scale {
            return Ok(false);
        }
    }
    Ok(true)
}

impl Martingale {
    fn solve_lp(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<Option<f64>> {
        let n = self.coords.len();
        let mut lp = LpBuilder::new();
        let mut var = vec![None; n * n];
        for x in mu.support() {
            for y in 0..n {
                let c = self.cost.get(x, y);
                if !is_forbidden(c) {
                    var[x * n + y] = Some(lp.var(c));
                }
            }
        }
        for x in mu.support() {
            let row: Vec<_> = (0..n).filter_map(|y| var[x * n + y].map(|v| (v, 1.0))).collect();
            lp.row(row, Cmp::Eq, mu.weights()[x]);
            // Σ_y (y − x) π(x,y) = 0
            let bary: Vec<_> = (0..n).filter_map(|y| var[x * n + y].map(|v| (v, self.coords[y] - self.coords[x]))).collect();
            lp.row(bary, Cmp::Eq, 0.0);
        }
        for y in 0..n {
            let col: Vec<_> = (0..n).filter_map(|x| var[x * n + y].map(|v| (v, 1.0))).collect();
            if col.is_empty() {
                if nu.weights()[y] > 0.0 {
                    return Ok(None);
                }
                continue;
            }
            lp.row(col, Cmp::Eq, nu.weights()[y]);
        }
        match lp.solve()? {
            Ok(sol) => Ok(Some(sol.value)),
            Err(_) => Ok(None),
        }
    }
}

impl Transfer for Martingale {
    fn name(&self) -> String {
        "martingale".into()
    }

    fn direction(&self) -> Direction {
        Direction::Backward
    }

    fn source(&self) -> &Arc<FiniteSpace> {
        self.cost.source()
    }

    fn target(&self) -> &Arc<FiniteSpace> {
        self.cost.target()
    }

    fn dirac_domain(&self) -> bool {
        self.coords.len() == 1
    }

    /// LP over martingale couplings; `+∞` when μ and ν are not in convex
    /// order. The LP verdict and the order predicate must agree.
    fn eval(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<f64> {
        check_pair(self, mu, nu)?;
        let ordered = convex_order(mu, nu, 1e-9)?;
        let lp = self.solve_lp(mu, nu)?;
        match (lp, ordered) {
            (Some(v), true) => Ok(v),
            (None, false) => Ok(f64::INFINITY),
            // forbidden cells can make an ordered pair infeasible
            (None, true) if self.cost.has_forbidden() => Ok(f64::INFINITY),
            (lp, _) => Err(Error::Consistency(format!(
                "martingale LP feasibility ({}) disagrees with the convex-order check ({ordered})",
                lp.is_some()
            ))),
        }
    }

    fn backward(&self, f: &[f64]) -> Result<OpValue> {
        let n = self.coords.len();
        check_len("potential", f, n)?;
        let mut values = Vec::with_capacity(n);
        let mut jac = vec![0.0; n * n];
        for x in 0..n {
            let idx: Vec<usize> = (0..n).filter(|&y| !is_forbidden(self.cost.get(x, y))).collect();
            let pts: Vec<(f64, f64)> = idx.iter().map(|&y| (self.coords[y], f[y] - self.cost.get(x, y))).collect();
            if pts.is_empty() {
                return Err(Error::domain(format!("cost row {x} is entirely forbidden")));
            }
            let env = concave_envelope_1d(&pts)?;
            let Some((i, j, w)) = env.bracket(self.coords[x]) else {
                return Err(Error::domain(format!("grid point {x} lies outside its allowed targets' hull")));
            };
            values.push(env.eval(self.coords[x]));
            jac[x * n + idx[env.sources[i]]] += w;
            jac[x * n + idx[env.sources[j]]] += 1.0 - w;
        }
        Ok(OpValue::new(values, jac, n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{backward_dual, check_backward_axioms};
    use crate::rng;
    use crate::solvers::ascent::AscentConfig;
    use rand::Rng;

    fn grid(xs: &[f64]) -> Arc<FiniteSpace> {
        Arc::new(FiniteSpace::grid("G", xs.to_vec()).unwrap())
    }

    fn quad_cost(g: &Arc<FiniteSpace>) -> CostMatrix {
        let xs = g.coords().unwrap().to_vec();
        CostMatrix::from_fn(g.clone(), g.clone(), |x, y| (xs[x] - xs[y]).powi(2) + 0.3 * (xs[x] * xs[y]).sin()).unwrap()
    }

    /// Spreads each atom of μ to a random pair of grid points around it.
    fn martingale_image(r: &mut impl Rng, mu: &ProbMeasure) -> ProbMeasure {
        let xs = mu.space().coords().unwrap();
        let n = xs.len();
        let mut w = vec![0.0; n];
        for x in mu.support() {
            let lo = r.gen_range(0..=x);
            let hi = r.gen_range(x..n);
            if lo == hi {
                w[x] += mu.weights()[x];
            } else {
                let t = (xs[hi] - xs[x]) / (xs[hi] - xs[lo]);
                w[lo] += mu.weights()[x] * t;
                w[hi] += mu.weights()[x] * (1.0 - t);
            }
        }
        ProbMeasure::from_unnormalized(mu.space().clone(), w).unwrap()
    }

    #[test]
    fn identity_coupling_bound() {
        let g = grid(&[0.0, 1.0, 2.5, 3.0]);
        let c = quad_cost(&g);
        let t = martingale_transfer(c.clone()).unwrap();
        let mu = ProbMeasure::new(g.clone(), vec![0.1, 0.4, 0.2, 0.3]).unwrap();
        let diag: f64 = (0..4).map(|x| mu.weights()[x] * c.get(x, x)).sum();
        // with μ = ν only the identity is a martingale coupling
        assert!((t.eval(&mu, &mu).unwrap() - diag).abs() < 1e-12);
    }

    #[test]
    fn dirac_splits_in_two() {
        let g = grid(&[0.0, 1.0, 2.0]);
        let c = quad_cost(&g);
        let t = martingale_transfer(c.clone()).unwrap();
        let mu = ProbMeasure::dirac_at(g.clone(), 1);
        let nu = ProbMeasure::new(g.clone(), vec![0.5, 0.0, 0.5]).unwrap();
        let expect = 0.5 * c.get(1, 0) + 0.5 * c.get(1, 2);
        assert!((t.eval(&mu, &nu).unwrap() - expect).abs() < 1e-12);
        let a = ProbMeasure::dirac_at(g.clone(), 0);
        let b = ProbMeasure::dirac_at(g.clone(), 2);
        assert_eq!(t.eval(&a, &b).unwrap(), f64::INFINITY);
    }

    #[test]
    fn strassen_consistency() {
        let mut r = rng::stream(21, 0);
        let mut feasible = 0;
        for k in 0..200 {
            let n = r.gen_range(2..=6);
            let mut xs: Vec<f64> = (0..n).map(|_| r.gen_range(-3.0..3.0)).collect();
            xs.sort_by(f64::total_cmp);
            xs.dedup();
            let g = grid(&xs);
            let t = martingale_transfer(quad_cost(&g)).unwrap();
            let mu = ProbMeasure::from_unnormalized(g.clone(), rng::sparse_simplex_point(&mut r, xs.len(), 0.3)).unwrap();
            let nu = if k % 2 == 0 {
                martingale_image(&mut r, &mu)
            } else {
                ProbMeasure::from_unnormalized(g.clone(), rng::simplex_point(&mut r, xs.len())).unwrap()
            };
            // eval errors out if the LP and the predicate disagree
            let v = t.eval(&mu, &nu).unwrap();
            if v.is_finite() {
                feasible += 1;
            }
            assert_eq!(v.is_finite(), convex_order(&mu, &nu, 1e-9).unwrap());
        }
        assert!(feasible >= 100);
    }

    #[test]
    fn envelope_operator_by_enumeration() {
        // the envelope value at x is the best two-point split with barycenter x
        let g = grid(&[0.0, 0.7, 1.5, 2.0, 3.2]);
        let c = quad_cost(&g);
        let t = martingale_transfer(c.clone()).unwrap();
        let xs = g.coords().unwrap().to_vec();
        let mut r = rng::stream(22, 0);
        for _ in 0..20 {
            let f = rng::uniform_vec(&mut r, 5, -2.0, 2.0);
            let op = t.backward(&f).unwrap();
            for x in 0..5 {
                let h = |y: usize| f[y] - c.get(x, y);
                let mut best = h(x);
                for a in 0..=x {
                    for b in x..5 {
                        if a != b {
                            let w = (xs[b] - xs[x]) / (xs[b] - xs[a]);
                            best = best.max(w * h(a) + (1.0 - w) * h(b));
                        }
                    }
                }
                assert!((op.values[x] - best).abs() < 1e-12);
                let bary: f64 = op.row(x).iter().zip(&xs).map(|(p, y)| p * y).sum();
                assert!((bary - xs[x]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn duality_on_feasible_pairs() {
        let g = grid(&[0.0, 1.0, 2.0, 3.5]);
        let t = martingale_transfer(quad_cost(&g)).unwrap();
        let mut r = rng::stream(23, 0);
        for _ in 0..5 {
            let mu = ProbMeasure::from_unnormalized(g.clone(), rng::simplex_point(&mut r, 4)).unwrap();
            let nu = martingale_image(&mut r, &mu);
            let primal = t.eval(&mu, &nu).unwrap();
            let d = backward_dual(t.as_ref(), &mu, &nu, &AscentConfig::default()).unwrap();
            assert!((d.value - primal).abs() < 1e-5, "{} vs {primal}", d.value);
        }
    }

    #[test]
    fn axioms() {
        let g = grid(&[0.0, 1.0, 2.0, 3.5]);
        let t = martingale_transfer(quad_cost(&g)).unwrap();
        assert!(check_backward_axioms(t.as_ref(), 100, 24, 1e-10).unwrap().passed());
    }
}
