//! Building new transfers from old ones: positive scaling, sums,
//! inf-convolution chains and tensor products, plus the order relations
//! between the two Kantorovich operators of a transfer that has both.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::catalog::{
    backward_dual, check_len, check_pair, forward_dual, weak_ot_transfer_masked, CostOracle, Direction, EvalGrad, OpValue,
    Transfer, TransferHandle, WeakOtConfig,
};
use crate::error::{Error, Result};
use crate::measure::{check_space, FiniteSpace, ProbMeasure};
use crate::par::{map_range, Execution};
use crate::rng;
use crate::solvers::ascent::{max_over_potentials, AscentConfig};
use crate::solvers::kelley::{CuttingPlaneMaster, Polytope};
use crate::solvers::lp::{Cmp, LpBuilder};
use crate::solvers::minplus::minplus_compose;
use crate::solvers::transport::transport_raw;

/// Largest product space `tensor` will build.
pub const TENSOR_CAP: usize = 64;

/// a·𝓣, with Tₐ⁻f = a·T⁻(f/a).
#[derive(Debug, Clone)]
pub struct Scaled {
    a: f64,
    inner: TransferHandle,
}

pub fn scale(a: f64, t: TransferHandle) -> Result<TransferHandle> {
    if !(a.is_finite() && a > 0.0) {
        return Err(Error::input(format!("scale factor must be positive, got {a}")));
    }
    if a == 1.0 {
        return Ok(t);
    }
    Ok(Arc::new(Scaled { a, inner: t }))
}

fn scaled_op(a: f64, op: Result<OpValue>) -> Result<OpValue> {
    let mut op = op?;
    op.values.iter_mut().for_each(|v| *v *= a);
    Ok(op)
}

impl Transfer for Scaled {
    fn name(&self) -> String {
        format!("{}*{}", self.a, self.inner.name())
    }

    fn direction(&self) -> Direction {
        self.inner.direction()
    }

    fn source(&self) -> &Arc<FiniteSpace> {
        self.inner.source()
    }

    fn target(&self) -> &Arc<FiniteSpace> {
        self.inner.target()
    }

    fn dirac_domain(&self) -> bool {
        self.inner.dirac_domain()
    }

    fn eval(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<f64> {
        Ok(self.a * self.inner.eval(mu, nu)?)
    }

    fn eval_with_subgradients(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<EvalGrad> {
        let e = self.inner.eval_with_subgradients(mu, nu)?;
        let a = self.a;
        Ok(EvalGrad {
            value: a * e.value,
            d_mu: e.d_mu.iter().map(|v| a * v).collect(),
            d_nu: e.d_nu.iter().map(|v| a * v).collect(),
        })
    }

    fn dirac_row(&self, x: usize, sigma: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (v, g) = self.inner.dirac_row(x, sigma)?;
        Ok((self.a * v, g.iter().map(|s| self.a * s).collect()))
    }

    fn backward(&self, g: &[f64]) -> Result<OpValue> {
        let inner: Vec<f64> = g.iter().map(|v| v / self.a).collect();
        scaled_op(self.a, self.inner.backward(&inner))
    }

    fn forward(&self, f: &[f64]) -> Result<OpValue> {
        let inner: Vec<f64> = f.iter().map(|v| v / self.a).collect();
        scaled_op(self.a, self.inner.forward(&inner))
    }

    /// (a𝓣)*_μ(g) = a·𝓣*_μ(g/a).
    fn conj_mu(&self, mu: &ProbMeasure, g: &[f64]) -> Result<(f64, Vec<f64>)> {
        let inner: Vec<f64> = g.iter().map(|v| v / self.a).collect();
        let (v, d) = self.inner.conj_mu(mu, &inner)?;
        Ok((self.a * v, d))
    }

    fn conj_nu(&self, nu: &ProbMeasure, f: &[f64]) -> Result<(f64, Vec<f64>)> {
        let inner: Vec<f64> = f.iter().map(|v| v / self.a).collect();
        let (v, d) = self.inner.conj_nu(nu, &inner)?;
        Ok((self.a * v, d))
    }
}

/// 𝓣₁ + 𝓣₂. The operator is the pointwise inf-split
/// T⁻f(x) = inf_g T₁⁻g(x) + T₂⁻(f − g)(x), found by cutting planes.
///
/// That operator is exact on Dirac masses only. For general μ the partial
/// conjugate is inf_g ⟨T₁⁻g + T₂⁻(f − g), μ⟩ with one g for all x, and the
/// pointwise operator dualizes the (larger) transfer generated by the Dirac
/// values. For two MK transfers that is MK with cost c₁ + c₂, which exceeds
/// 𝓣_{c₁} + 𝓣_{c₂} in general. [`Sum::dual`] uses independent potentials.
#[derive(Debug, Clone)]
pub struct Sum {
    t1: TransferHandle,
    t2: TransferHandle,
    cfg: AscentConfig,
    execution: Execution,
}

pub fn add(t1: TransferHandle, t2: TransferHandle) -> Result<TransferHandle> {
    Ok(add_sum(t1, t2)?)
}

pub fn add_sum(t1: TransferHandle, t2: TransferHandle) -> Result<Arc<Sum>> {
    check_space(t1.source(), t2.source())?;
    check_space(t1.target(), t2.target())?;
    if meet(t1.direction(), t2.direction()).is_none() {
        return Err(Error::input("a sum needs two backward or two forward transfers"));
    }
    let mut cfg = AscentConfig::default();
    cfg.tol = 1e-10;
    Ok(Arc::new(Sum { t1, t2, cfg, execution: Execution::default() }))
}

impl Sum {
    /// sup over (g₁, g₂) of the two dual objectives, which separates.
    pub fn dual(&self, mu: &ProbMeasure, nu: &ProbMeasure, cfg: &AscentConfig) -> Result<f64> {
        let one = |t: &TransferHandle| {
            if t.direction().has_backward() {
                backward_dual(t.as_ref(), mu, nu, cfg)
            } else {
                forward_dual(t.as_ref(), mu, nu, cfg)
            }
        };
        Ok(one(&self.t1)?.value + one(&self.t2)?.value)
    }

    /// inf (or sup, for forward operators) over splits f = g + (f − g).
    fn split(&self, f: &[f64], forward: bool) -> Result<OpValue> {
        let apply = |t: &TransferHandle, h: &[f64]| if forward { t.forward(h) } else { t.backward(h) };
        let sign = if forward { 1.0 } else { -1.0 };
        let dim = f.len();
        let n_out = apply(&self.t1, f)?.values.len();
        let half: Vec<f64> = f.iter().map(|v| 0.5 * v).collect();
        let rows = map_range(self.execution, n_out, |x| -> Result<(f64, Vec<f64>)> {
            // g = f/2 + δ; the split value is invariant under g ↦ g + k
            let parts = |d: &[f64]| -> Result<(f64, Vec<f64>, Vec<f64>)> {
                let g: Vec<f64> = half.iter().zip(d).map(|(a, b)| a + b).collect();
                let rest: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a - b).collect();
                let (o1, o2) = (apply(&self.t1, &g)?, apply(&self.t2, &rest)?);
                Ok((o1.values[x] + o2.values[x], o1.row(x).to_vec(), o2.row(x).to_vec()))
            };
            let oracle = |d: &[f64]| match parts(d) {
                Ok((v, r1, r2)) => (sign * v, r1.iter().zip(&r2).map(|(a, b)| sign * (a - b)).collect()),
                Err(_) => (f64::NAN, vec![f64::NAN; dim]),
            };
            let res = max_over_potentials(oracle, dim, Some(0), &self.cfg)?;
            // the two natural starts g = f/2 and g = f are kept if better
            let mut best = (sign * res.value, res.point.clone());
            for d in [vec![0.0; dim], half.clone()] {
                let v = parts(&d)?.0;
                if sign * v > sign * best.0 {
                    best = (v, d);
                }
            }
            let gap = res.upper_bound - res.value;
            if gap > 1e-8 * (1.0 + res.value.abs()) && !res.converged {
                return Err(Error::NonConvergence {
                    iterations: res.iterations,
                    detail: format!("inf-split at point {x}: gap {gap}"),
                });
            }
            let (v, _, r2) = parts(&best.1)?;
            Ok((v, r2))
        });
        let mut values = Vec::with_capacity(n_out);
        let mut jac = Vec::with_capacity(n_out * dim);
        for r in rows {
            let (v, row) = r?;
            values.push(v);
            jac.extend(row);
        }
        Ok(OpValue::new(values, jac, dim))
    }
}

fn meet(a: Direction, b: Direction) -> Option<Direction> {
    match (a.has_backward() && b.has_backward(), a.has_forward() && b.has_forward()) {
        (true, true) => Some(Direction::Both),
        (true, false) => Some(Direction::Backward),
        (false, true) => Some(Direction::Forward),
        (false, false) => None,
    }
}

impl Transfer for Sum {
    fn name(&self) -> String {
        format!("({}+{})", self.t1.name(), self.t2.name())
    }

    fn direction(&self) -> Direction {
        meet(self.t1.direction(), self.t2.direction()).unwrap_or(Direction::Backward)
    }

    fn source(&self) -> &Arc<FiniteSpace> {
        self.t1.source()
    }

    fn target(&self) -> &Arc<FiniteSpace> {
        self.t1.target()
    }

    fn dirac_domain(&self) -> bool {
        self.t1.dirac_domain() && self.t2.dirac_domain()
    }

    fn eval(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<f64> {
        Ok(self.t1.eval(mu, nu)? + self.t2.eval(mu, nu)?)
    }

    fn eval_with_subgradients(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<EvalGrad> {
        let (a, b) = (self.t1.eval_with_subgradients(mu, nu)?, self.t2.eval_with_subgradients(mu, nu)?);
        let add = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p + q).collect();
        Ok(EvalGrad { value: a.value + b.value, d_mu: add(&a.d_mu, &b.d_mu), d_nu: add(&a.d_nu, &b.d_nu) })
    }

    fn dirac_row(&self, x: usize, sigma: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, ga) = self.t1.dirac_row(x, sigma)?;
        let (b, gb) = self.t2.dirac_row(x, sigma)?;
        Ok((a + b, ga.iter().zip(&gb).map(|(p, q)| p + q).collect()))
    }

    fn backward(&self, g: &[f64]) -> Result<OpValue> {
        if !self.direction().has_backward() {
            return Err(Error::domain("sum has no backward operator"));
        }
        check_len("potential", g, self.target().len())?;
        self.split(g, false)
    }

    fn forward(&self, f: &[f64]) -> Result<OpValue> {
        if !self.direction().has_forward() {
            return Err(Error::domain("sum has no forward operator"));
        }
        check_len("potential", f, self.source().len())?;
        self.split(f, true)
    }
}

/// A cut F(μ′,ν′) ≥ intercept + ⟨d_mu,μ′⟩ + ⟨d_nu,ν′⟩ valid everywhere, with
/// the best known value at (μ,ν).
pub(crate) struct Minorant {
    pub(crate) value: f64,
    pub(crate) intercept: f64,
    pub(crate) d_mu: Vec<f64>,
    pub(crate) d_nu: Vec<f64>,
}

pub(crate) fn minorant(t: &dyn Transfer, mu: &ProbMeasure, nu: &ProbMeasure, cfg: &AscentConfig) -> Result<Minorant> {
    match t.eval_with_subgradients(mu, nu) {
        Ok(e) => {
            let intercept = e.value - mu.integrate(&e.d_mu) - nu.integrate(&e.d_nu);
            Ok(Minorant { value: e.value, intercept, d_mu: e.d_mu, d_nu: e.d_nu })
        }
        Err(Error::Domain(_)) if t.direction().has_backward() => {
            // weak duality: 𝓣(μ′,ν′) ≥ ⟨g,ν′⟩ − ⟨T⁻g,μ′⟩ for every g
            let value = t.eval(mu, nu)?;
            if !value.is_finite() {
                return Ok(Minorant { value, intercept: 0.0, d_mu: vec![], d_nu: vec![] });
            }
            let d = backward_dual(t, mu, nu, cfg)?;
            let op = t.backward(&d.point)?;
            Ok(Minorant { value, intercept: 0.0, d_mu: op.values.iter().map(|v| -v).collect(), d_nu: d.point })
        }
        Err(e) => Err(e),
    }
}

/// 𝓣₁ ⋆ 𝓣₂ ⋆ … ⋆ 𝓣ₖ: the inf over intermediate marginals of the sum.
#[derive(Debug, Clone)]
pub struct ComposedTransfer {
    parts: Vec<TransferHandle>,
    direction: Direction,
    /// Cutting-plane rounds for the primal.
    pub max_iters: usize,
    pub tol: f64,
    pub ascent: AscentConfig,
}

/// Primal solution of a convolution chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPrimal {
    pub value: f64,
    pub lower_bound: f64,
    /// σ₁, …, σₖ₋₁ at the best point found.
    pub intermediates: Vec<ProbMeasure>,
    pub iterations: usize,
}

pub fn convolve(t1: TransferHandle, t2: TransferHandle) -> Result<Arc<ComposedTransfer>> {
    convolve_chain(vec![t1, t2])
}

pub fn convolve_chain(parts: Vec<TransferHandle>) -> Result<Arc<ComposedTransfer>> {
    if parts.len() < 2 {
        return Err(Error::input("a convolution needs at least two transfers"));
    }
    let mut direction = parts[0].direction();
    for w in parts.windows(2) {
        check_space(w[0].target(), w[1].source())?;
    }
    for p in &parts[1..] {
        direction =
            meet(direction, p.direction()).ok_or_else(|| Error::input("convolution needs all parts backward or all forward"))?;
    }
    Ok(Arc::new(ComposedTransfer { parts, direction, max_iters: 3000, tol: 1e-10, ascent: AscentConfig::default() }))
}

impl ComposedTransfer {
    pub fn parts(&self) -> &[TransferHandle] {
        &self.parts
    }

    /// The MK transfer of the min-plus composed cost, when every part is MK.
    pub fn exact_mk(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<Option<f64>> {
        let mut costs = self.parts.iter().map(|p| p.mk_cost());
        let Some(Some(first)) = costs.next() else { return Ok(None) };
        let mut c = first.clone();
        for next in costs {
            let Some(next) = next else { return Ok(None) };
            c = minplus_compose(&c, next)?;
        }
        check_pair(self, mu, nu)?;
        match transport_raw(c.entries(), mu.weights(), nu.weights()) {
            Ok(raw) => Ok(Some(raw.value)),
            Err(Error::Infeasible(_)) => Ok(Some(f64::INFINITY)),
            Err(e) => Err(e),
        }
    }

    /// inf over σ₁…σₖ₋₁ of Σᵢ 𝓣ᵢ(σᵢ₋₁,σᵢ) with σ₀ = μ, σₖ = ν, by multi-cut
    /// Kelley over the product of simplices. Pushforward parts enter as
    /// linear constraints instead of cuts.
    pub fn primal(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<ChainPrimal> {
        check_pair(self, mu, nu)?;
        let k = self.parts.len();
        let sizes: Vec<usize> = self.parts[1..].iter().map(|p| p.source().len()).collect();
        let offsets: Vec<usize> = sizes
            .iter()
            .scan(0, |acc, s| {
                let o = *acc;
                *acc += s;
                Some(o)
            })
            .collect();
        let dim: usize = sizes.iter().sum();
        // block i of the variables is σᵢ₊₁
        let mut eq: Vec<(Vec<f64>, f64)> = Vec::new();
        for (o, s) in offsets.iter().zip(&sizes) {
            let mut e = vec![0.0; dim];
            e[*o..o + s].iter_mut().for_each(|v| *v = 1.0);
            eq.push((e, 1.0));
        }
        let le: Vec<(Vec<f64>, f64)> = (0..dim)
            .map(|i| {
                let mut g = vec![0.0; dim];
                g[i] = -1.0;
                (g, 0.0)
            })
            .collect();
        let mut cut_parts = Vec::new();
        for (i, p) in self.parts.iter().enumerate() {
            let Some(map) = p.as_pushforward() else {
                cut_parts.push(i);
                continue;
            };
            // map#σᵢ = σᵢ₊₁, one row per target point
            for y in 0..map.target.len() {
                let mut e = vec![0.0; dim];
                let mut rhs = 0.0;
                for (x, &img) in map.image.iter().enumerate() {
                    if img == y {
                        if i == 0 {
                            rhs -= mu.weights()[x];
                        } else {
                            e[offsets[i - 1] + x] += 1.0;
                        }
                    }
                }
                if i + 1 == k {
                    rhs += nu.weights()[y];
                } else {
                    e[offsets[i] + y] -= 1.0;
                }
                eq.push((e, rhs));
            }
        }
        let infinite = || ChainPrimal { value: f64::INFINITY, lower_bound: f64::INFINITY, intermediates: vec![], iterations: 0 };
        // a feasible start, which also decides emptiness
        let mut lp = LpBuilder::new();
        let vars: Vec<usize> = (0..dim).map(|_| lp.var(0.0)).collect();
        for (e, rhs) in &eq {
            let row: Vec<(usize, f64)> = e.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (vars[j], *v)).collect();
            if row.is_empty() {
                if rhs.abs() > 1e-10 {
                    return Ok(infinite());
                }
                continue;
            }
            lp.row(row, Cmp::Eq, *rhs);
        }
        let start = match lp.solve()? {
            Ok(sol) => sol.x,
            Err(_) => return Ok(infinite()),
        };
        let to_measures = |x: &[f64]| -> Result<Vec<ProbMeasure>> {
            self.parts[1..]
                .iter()
                .zip(offsets.iter().zip(&sizes))
                .map(|(p, (o, s))| {
                    ProbMeasure::from_unnormalized(p.source().clone(), x[*o..o + s].iter().map(|v| v.max(0.0)).collect())
                })
                .collect()
        };
        if cut_parts.is_empty() {
            return Ok(ChainPrimal { value: 0.0, lower_bound: 0.0, intermediates: to_measures(&start)?, iterations: 0 });
        }
        let mut master = CuttingPlaneMaster::new(cut_parts.len(), &Polytope { dim, eq, le });
        let mut best: (f64, Vec<f64>) = (f64::INFINITY, start.clone());
        let mut lb = f64::NEG_INFINITY;
        let mut x = start.clone();
        let mut iterations = 0;
        for it in 0..self.max_iters {
            iterations = it + 1;
            let mut evaluated = None;
            for eps in [0.0, 1e-9, 1e-6, 1e-3, 1e-1] {
                let y: Vec<f64> = x.iter().zip(&start).map(|(a, b)| (1.0 - eps) * a + eps * b).collect();
                let sig = to_measures(&y)?;
                let cuts: Vec<Minorant> = cut_parts
                    .iter()
                    .map(|&i| {
                        let a = if i == 0 { mu } else { &sig[i - 1] };
                        let b = if i + 1 == k { nu } else { &sig[i] };
                        minorant(self.parts[i].as_ref(), a, b, &self.ascent)
                    })
                    .collect::<Result<_>>()?;
                if cuts.iter().all(|c| c.value.is_finite()) {
                    evaluated = Some((y, cuts));
                    break;
                }
            }
            let Some((y, cuts)) = evaluated else {
                return Err(Error::domain("convolution search left the domain of a part"));
            };
            let total: f64 = cuts.iter().map(|c| c.value).sum();
            if total < best.0 {
                best = (total, y.clone());
            }
            for (slot, (&i, c)) in cut_parts.iter().zip(&cuts).enumerate() {
                let mut slope = vec![0.0; dim];
                let mut intercept = c.intercept;
                if i == 0 {
                    intercept += mu.integrate(&c.d_mu);
                } else {
                    slope[offsets[i - 1]..offsets[i - 1] + sizes[i - 1]].copy_from_slice(&c.d_mu);
                }
                if i + 1 == k {
                    intercept += nu.integrate(&c.d_nu);
                } else {
                    slope[offsets[i]..offsets[i] + sizes[i]].copy_from_slice(&c.d_nu);
                }
                master.add_cut(slot, intercept, &slope);
            }
            let sol = master.solve()?;
            lb = lb.max(sol.value);
            if best.0 - lb <= self.tol * (1.0 + best.0.abs()) {
                break;
            }
            x = sol.x;
        }
        let gap = best.0 - lb;
        if gap > 1e3 * self.tol * (1.0 + best.0.abs()) {
            return Err(Error::NonConvergence { iterations, detail: format!("convolution gap {gap}") });
        }
        Ok(ChainPrimal { value: best.0, lower_bound: lb, intermediates: to_measures(&best.1)?, iterations })
    }

    /// sup_g ⟨g,ν⟩ − ⟨T₁⁻∘…∘Tₖ⁻g, μ⟩.
    pub fn dual(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<f64> {
        Ok(backward_dual(self, mu, nu, &self.ascent)?.value)
    }
}

impl Transfer for ComposedTransfer {
    fn name(&self) -> String {
        self.parts.iter().map(|p| p.name()).collect::<Vec<_>>().join("⋆")
    }

    fn direction(&self) -> Direction {
        self.direction
    }

    fn source(&self) -> &Arc<FiniteSpace> {
        self.parts[0].source()
    }

    fn target(&self) -> &Arc<FiniteSpace> {
        self.parts[self.parts.len() - 1].target()
    }

    fn dirac_domain(&self) -> bool {
        self.parts.iter().all(|p| p.dirac_domain())
    }

    fn eval(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<f64> {
        if let Some(v) = self.exact_mk(mu, nu)? {
            return Ok(v);
        }
        Ok(self.primal(mu, nu)?.value)
    }

    /// T₁⁻∘T₂⁻∘…∘Tₖ⁻.
    fn backward(&self, g: &[f64]) -> Result<OpValue> {
        if !self.direction.has_backward() {
            return Err(Error::domain("convolution has no backward operator"));
        }
        let mut acc = self.parts[self.parts.len() - 1].backward(g)?;
        for p in self.parts[..self.parts.len() - 1].iter().rev() {
            let outer = p.backward(&acc.values)?;
            let jac = outer.compose_jacobian(&acc);
            acc = OpValue::new(outer.values, jac, acc.cols);
        }
        Ok(acc)
    }

    /// Tₖ⁺∘…∘T₁⁺.
    fn forward(&self, f: &[f64]) -> Result<OpValue> {
        if !self.direction.has_forward() {
            return Err(Error::domain("convolution has no forward operator"));
        }
        let mut acc = self.parts[0].forward(f)?;
        for p in &self.parts[1..] {
            let outer = p.forward(&acc.values)?;
            let jac = outer.compose_jacobian(&acc);
            acc = OpValue::new(outer.values, jac, acc.cols);
        }
        Ok(acc)
    }
}

fn product_space(a: &Arc<FiniteSpace>, b: &Arc<FiniteSpace>) -> Result<Arc<FiniteSpace>> {
    let n = a.len() * b.len();
    if n > TENSOR_CAP {
        return Err(Error::input(format!("product space of {n} points exceeds the cap of {TENSOR_CAP}")));
    }
    let labels = a.points().iter().flat_map(|p| b.points().iter().map(move |q| format!("{p}|{q}"))).collect();
    Ok(Arc::new(FiniteSpace::new(format!("{}x{}", a.id(), b.id()), labels, None)?))
}

/// Product of two measures on the product space built by `tensor`.
pub fn product_measure(space: &Arc<FiniteSpace>, a: &ProbMeasure, b: &ProbMeasure) -> Result<ProbMeasure> {
    if space.len() != a.len() * b.len() {
        return Err(Error::input("product space does not match the factor sizes"));
    }
    let w = a.weights().iter().flat_map(|p| b.weights().iter().map(move |q| p * q)).collect();
    ProbMeasure::from_unnormalized(space.clone(), w)
}

/// 𝓣₁ ⊗ 𝓣₂ on (X₁×X₂)×(Y₁×Y₂): the weak transport with cost
/// c((x₁,x₂),π) = 𝓣₁(δ_{x₁},π₁) + 𝓣₂(δ_{x₂},π₂), πᵢ the marginals of π.
/// Pushforward factors become support constraints.
pub fn tensor(t1: TransferHandle, t2: TransferHandle) -> Result<TransferHandle> {
    for t in [&t1, &t2] {
        if !t.direction().has_backward() {
            return Err(Error::input(format!("{} is not a backward transfer", t.name())));
        }
        if !t.dirac_domain() && t.as_pushforward().is_none() {
            return Err(Error::input(format!("{} is not finite on Dirac pairs", t.name())));
        }
    }
    let xs = product_space(t1.source(), t2.source())?;
    let ys = product_space(t1.target(), t2.target())?;
    let (n2, m1, m2) = (t2.source().len(), t1.target().len(), t2.target().len());
    let m = m1 * m2;
    let allowed = if t1.as_pushforward().is_some() || t2.as_pushforward().is_some() {
        let ok = |t: &TransferHandle, x: usize, y: usize| t.as_pushforward().map_or(true, |p| p.image[x] == y);
        let mut mask = vec![false; xs.len() * m];
        for x in 0..xs.len() {
            for y in 0..m {
                mask[x * m + y] = ok(&t1, x / n2, y / m2) && ok(&t2, x % n2, y % m2);
            }
        }
        Some(mask)
    } else {
        None
    };
    let (a, b) = (t1.clone(), t2.clone());
    let oracle: CostOracle = Arc::new(move |x, sigma| {
        let mut p1 = vec![0.0; m1];
        let mut p2 = vec![0.0; m2];
        for (y, s) in sigma.iter().enumerate() {
            p1[y / m2] += s;
            p2[y % m2] += s;
        }
        // pushforward factors are handled by the mask and cost nothing
        let part = |t: &TransferHandle, x: usize, p: &[f64]| {
            if t.as_pushforward().is_some() {
                return (0.0, vec![0.0; p.len()]);
            }
            t.dirac_row(x, p).unwrap_or((f64::NAN, vec![f64::NAN; p.len()]))
        };
        let (v1, g1) = part(&a, x / n2, &p1);
        let (v2, g2) = part(&b, x % n2, &p2);
        (v1 + v2, (0..m).map(|y| g1[y / m2] + g2[y % m2]).collect())
    });
    weak_ot_transfer_masked(xs, ys, oracle, allowed, WeakOtConfig::default())
}

/// Violations of g ≤ T⁺T⁻g, T⁻T⁺f ≤ f and the two triple identities.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OrderReport {
    pub samples: usize,
    pub lower: usize,
    pub upper: usize,
    pub triple_backward: usize,
    pub triple_forward: usize,
    pub worst: f64,
}

impl OrderReport {
    pub fn passed(&self) -> bool {
        self.lower + self.upper + self.triple_backward + self.triple_forward == 0
    }
}

pub fn check_order_relations(t: &dyn Transfer, samples: usize, seed: u64, tol: f64) -> Result<OrderReport> {
    if t.direction() != Direction::Both {
        return Err(Error::input(format!("{} does not have both operators", t.name())));
    }
    let (nx, ny) = (t.source().len(), t.target().len());
    let mut r = rng::stream(seed, 0x0bde);
    let mut rep = OrderReport { samples, ..Default::default() };
    let note = |count: &mut usize, excess: f64, worst: &mut f64| {
        if excess > tol {
            *count += 1;
        }
        *worst = worst.max(excess);
    };
    for _ in 0..samples {
        let g = rng::uniform_vec(&mut r, ny, -3.0, 3.0);
        let f = rng::uniform_vec(&mut r, nx, -3.0, 3.0);
        let tm = t.backward(&g)?.values;
        let tpm = t.forward(&tm)?.values;
        let tmpm = t.backward(&tpm)?.values;
        let tp = t.forward(&f)?.values;
        let tmp = t.backward(&tp)?.values;
        let tpmp = t.forward(&tmp)?.values;
        let mut worst = rep.worst;
        for (a, b) in g.iter().zip(&tpm) {
            note(&mut rep.lower, a - b, &mut worst);
        }
        for (a, b) in tmp.iter().zip(&f) {
            note(&mut rep.upper, a - b, &mut worst);
        }
        for (a, b) in tmpm.iter().zip(&tm) {
            note(&mut rep.triple_backward, (a - b).abs(), &mut worst);
        }
        for (a, b) in tpmp.iter().zip(&tp) {
            note(&mut rep.triple_forward, (a - b).abs(), &mut worst);
        }
        rep.worst = worst;
    }
    Ok(rep)
}

/// T⁻∘T⁺f, which lies below f and is 𝓣-concave.
pub fn t_concave_projection(t: &dyn Transfer, f: &[f64]) -> Result<Vec<f64>> {
    check_len("potential", f, t.source().len())?;
    Ok(t.backward(&t.forward(f)?.values)?.values)
}

/// T⁺∘T⁻g, which lies above g.
pub fn t_convex_projection(t: &dyn Transfer, g: &[f64]) -> Result<Vec<f64>> {
    check_len("potential", g, t.target().len())?;
    Ok(t.forward(&t.backward(g)?.values)?.values)
}

#[cfg(test)]
mod tests;
