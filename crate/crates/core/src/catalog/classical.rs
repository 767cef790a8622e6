//! Monge–Kantorovich transfers and their relatives: total variation,
//! Kantorovich–Rubinstein, the Brenier form, trivial transfers and
//! pushforwards.

use std::sync::Arc;

use crate::catalog::{check_len, check_pair, Direction, EvalGrad, OpValue, Transfer, TransferHandle};
use crate::error::{Error, Result};
use crate::measure::{
    check_space, is_forbidden, pushforward, total_variation, CostMatrix, FiniteSpace, PointMap, Potential, ProbMeasure,
};
use crate::solvers::transport::transport_raw;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MkKind {
    Plain,
    Tv,
    Kr,
}

#[derive(Debug, Clone)]
pub struct Mk {
    cost: CostMatrix,
    kind: MkKind,
}

pub fn mk_transfer(c: CostMatrix) -> TransferHandle {
    Arc::new(Mk { cost: c, kind: MkKind::Plain })
}

/// Total variation on `space`: MK with the Hamming cost.
pub fn tv_transfer(space: Arc<FiniteSpace>) -> Result<TransferHandle> {
    let cost = CostMatrix::from_fn(space.clone(), space, |x, y| if x == y { 0.0 } else { 1.0 })?;
    Ok(Arc::new(Mk { cost, kind: MkKind::Tv }))
}

/// Kantorovich–Rubinstein transfer of a metric.
pub fn kr_transfer(d: CostMatrix) -> Result<TransferHandle> {
    if !d.is_square() {
        return Err(Error::input("a metric needs a square matrix on one space"));
    }
    let n = d.rows();
    let tol = 1e-12 * d.max_finite().unwrap_or(1.0).abs().max(1.0);
    for x in 0..n {
        if d.get(x, x) != 0.0 {
            return Err(Error::input(format!("metric has nonzero diagonal at {x}")));
        }
        for y in 0..n {
            let v = d.get(x, y);
            if is_forbidden(v) || v < 0.0 || (x != y && v == 0.0) {
                return Err(Error::input(format!("metric entry ({x},{y}) = {v} is not a positive finite distance")));
            }
            if (v - d.get(y, x)).abs() > tol {
                return Err(Error::input(format!("metric is not symmetric at ({x},{y})")));
            }
            for z in 0..n {
                if d.get(x, z) > v + d.get(y, z) + tol {
                    return Err(Error::input(format!("triangle inequality fails for ({x},{y},{z})")));
                }
            }
        }
    }
    Ok(Arc::new(Mk { cost: d, kind: MkKind::Kr }))
}

impl Mk {
    pub fn cost(&self) -> &CostMatrix {
        &self.cost
    }
}

/// T⁻g(x) = max_y g(y) − c(x,y).
pub(crate) fn c_transform_backward(c: &CostMatrix, g: &[f64]) -> Result<OpValue> {
    check_len("potential", g, c.cols())?;
    let mut values = Vec::with_capacity(c.rows());
    let mut arg = Vec::with_capacity(c.rows());
    for x in 0..c.rows() {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (y, &cxy) in c.row(x).iter().enumerate() {
            if !is_forbidden(cxy) && g[y] - cxy > best.0 {
                best = (g[y] - cxy, y);
            }
        }
        if best.1 == usize::MAX {
            return Err(Error::domain(format!("cost row {x} is entirely forbidden")));
        }
        values.push(best.0);
        arg.push(best.1);
    }
    Ok(OpValue::from_argmax(values, &arg, c.cols()))
}

/// T⁺f(y) = min_x c(x,y) + f(x).
pub(crate) fn c_transform_forward(c: &CostMatrix, f: &[f64]) -> Result<OpValue> {
    check_len("potential", f, c.rows())?;
    let mut values = Vec::with_capacity(c.cols());
    let mut arg = Vec::with_capacity(c.cols());
    for y in 0..c.cols() {
        let mut best = (f64::INFINITY, usize::MAX);
        for x in 0..c.rows() {
            let cxy = c.get(x, y);
            if !is_forbidden(cxy) && cxy + f[x] < best.0 {
                best = (cxy + f[x], x);
            }
        }
        if best.1 == usize::MAX {
            return Err(Error::domain(format!("cost column {y} is entirely forbidden")));
        }
        values.push(best.0);
        arg.push(best.1);
    }
    Ok(OpValue::from_argmax(values, &arg, c.rows()))
}

fn mk_eval_grad(c: &CostMatrix, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<EvalGrad> {
    match transport_raw(c.entries(), mu.weights(), nu.weights()) {
        Ok(raw) => Ok(EvalGrad { value: raw.value, d_mu: raw.phi.iter().map(|p| -p).collect(), d_nu: raw.psi }),
        Err(Error::Infeasible(_)) => Ok(EvalGrad { value: f64::INFINITY, d_mu: vec![], d_nu: vec![] }),
        Err(e) => Err(e),
    }
}

impl Transfer for Mk {
    fn name(&self) -> String {
        match self.kind {
            MkKind::Plain => "mk",
            MkKind::Tv => "tv",
            MkKind::Kr => "kr",
        }
        .into()
    }

    fn direction(&self) -> Direction {
        Direction::Both
    }

    fn source(&self) -> &Arc<FiniteSpace> {
        self.cost.source()
    }

    fn target(&self) -> &Arc<FiniteSpace> {
        self.cost.target()
    }

    fn dirac_domain(&self) -> bool {
        !self.cost.has_forbidden()
    }

    fn eval(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<f64> {
        check_pair(self, mu, nu)?;
        if self.kind == MkKind::Tv {
            return total_variation(mu, nu);
        }
        Ok(mk_eval_grad(&self.cost, mu, nu)?.value)
    }

    fn eval_with_subgradients(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<EvalGrad> {
        check_pair(self, mu, nu)?;
        mk_eval_grad(&self.cost, mu, nu)
    }

    fn dirac_row(&self, x: usize, sigma: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_len("kernel", sigma, self.cost.cols())?;
        let row = self.cost.row(x);
        let blocked = row.iter().zip(sigma).any(|(c, s)| is_forbidden(*c) && *s > 0.0);
        let value = if blocked { f64::INFINITY } else { row.iter().zip(sigma).map(|(c, s)| c * s).sum() };
        Ok((value, row.to_vec()))
    }

    fn backward(&self, g: &[f64]) -> Result<OpValue> {
        c_transform_backward(&self.cost, g)
    }

    fn forward(&self, f: &[f64]) -> Result<OpValue> {
        c_transform_forward(&self.cost, f)
    }

    fn mk_cost(&self) -> Option<&CostMatrix> {
        Some(&self.cost)
    }
}

/// Discrete convex conjugate over grid coordinates:
/// f*(p) = max_i [p·xᵢ − f(xᵢ)], with the maximizing index.
pub fn legendre_discrete(coords: &[f64], f: &[f64], p: f64) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, (x, v)) in coords.iter().zip(f).enumerate() {
        let s = p * x - v;
        if s > best.0 {
            best = (s, i);
        }
    }
    best
}

/// 𝓦(μ,ν) = inf over couplings of ⟨x·y, π⟩ on a 1-D grid, as written: an
/// infimum of the plain product, so the classical W₂ connection needs a sign
/// flip of one argument.
#[derive(Debug, Clone)]
pub struct Brenier {
    inner: Mk,
    coords: Vec<f64>,
}

pub fn brenier_transfer(grid: Arc<FiniteSpace>) -> Result<TransferHandle> {
    let coords = grid.require_coords()?.to_vec();
    let cost = CostMatrix::from_fn(grid.clone(), grid, |x, y| coords[x] * coords[y])?;
    Ok(Arc::new(Brenier { inner: Mk { cost, kind: MkKind::Plain }, coords }))
}

impl Transfer for Brenier {
    fn name(&self) -> String {
        "brenier".into()
    }

    fn direction(&self) -> Direction {
        Direction::Both
    }

    fn source(&self) -> &Arc<FiniteSpace> {
        self.inner.source()
    }

    fn target(&self) -> &Arc<FiniteSpace> {
        self.inner.target()
    }

    fn dirac_domain(&self) -> bool {
        true
    }

    fn eval(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<f64> {
        self.inner.eval(mu, nu)
    }

    fn eval_with_subgradients(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<EvalGrad> {
        self.inner.eval_with_subgradients(mu, nu)
    }

    /// T⁻g(y) = (−g)*(−y).
    fn backward(&self, g: &[f64]) -> Result<OpValue> {
        check_len("potential", g, self.coords.len())?;
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let (values, arg): (Vec<f64>, Vec<usize>) = self
            .coords
            .iter()
            .map(|y| {
                // (−g)*(p) = max_i p xᵢ + g(xᵢ)
                let (v, i) = legendre_discrete(&self.coords, &neg, -y);
                (v, i)
            })
            .unzip();
        Ok(OpValue::from_argmax(values, &arg, self.coords.len()))
    }

    /// T⁺f(x) = −f*(−x).
    fn forward(&self, f: &[f64]) -> Result<OpValue> {
        check_len("potential", f, self.coords.len())?;
        let (values, arg): (Vec<f64>, Vec<usize>) = self
            .coords
            .iter()
            .map(|x| {
                let (v, i) = legendre_discrete(&self.coords, f, -x);
                (-v, i)
            })
            .unzip();
        Ok(OpValue::from_argmax(values, &arg, self.coords.len()))
    }

    fn mk_cost(&self) -> Option<&CostMatrix> {
        Some(&self.inner.cost)
    }
}

/// 𝓣(μ,ν) = ⟨c₂,ν⟩ − ⟨c₁,μ⟩.
#[derive(Debug, Clone)]
pub struct Trivial {
    c1: Potential,
    c2: Potential,
}

pub fn trivial_transfer(c1: Potential, c2: Potential) -> TransferHandle {
    Arc::new(Trivial { c1, c2 })
}

impl Trivial {
    pub fn c1(&self) -> &Potential {
        &self.c1
    }

    pub fn c2(&self) -> &Potential {
        &self.c2
    }
}

fn argmax(v: impl Iterator<Item = f64>) -> (f64, usize) {
    v.enumerate().fold((f64::NEG_INFINITY, 0), |b, (i, x)| if x > b.0 { (x, i) } else { b })
}

impl Transfer for Trivial {
    fn name(&self) -> String {
        "trivial".into()
    }

    fn direction(&self) -> Direction {
        Direction::Both
    }

    fn source(&self) -> &Arc<FiniteSpace> {
        self.c1.space()
    }

    fn target(&self) -> &Arc<FiniteSpace> {
        self.c2.space()
    }

    fn dirac_domain(&self) -> bool {
        true
    }

    fn eval(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<f64> {
        check_pair(self, mu, nu)?;
        Ok(nu.integrate(self.c2.values()) - mu.integrate(self.c1.values()))
    }

    fn eval_with_subgradients(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<EvalGrad> {
        let value = self.eval(mu, nu)?;
        Ok(EvalGrad { value, d_mu: self.c1.values().iter().map(|v| -v).collect(), d_nu: self.c2.values().to_vec() })
    }

    /// T⁻g = c₁ + max(g − c₂).
    fn backward(&self, g: &[f64]) -> Result<OpValue> {
        let c2 = self.c2.values();
        check_len("potential", g, c2.len())?;
        let (m, y) = argmax(g.iter().zip(c2).map(|(a, b)| a - b));
        let values: Vec<f64> = self.c1.values().iter().map(|c| c + m).collect();
        let arg = vec![y; values.len()];
        Ok(OpValue::from_argmax(values, &arg, c2.len()))
    }

    /// T⁺f = c₂ + min(f − c₁).
    fn forward(&self, f: &[f64]) -> Result<OpValue> {
        let c1 = self.c1.values();
        check_len("potential", f, c1.len())?;
        let (m, x) = argmax(f.iter().zip(c1).map(|(a, b)| b - a));
        let values: Vec<f64> = self.c2.values().iter().map(|c| c - m).collect();
        let arg = vec![x; values.len()];
        Ok(OpValue::from_argmax(values, &arg, c1.len()))
    }
}

/// 0 if ν is the image of μ, +∞ otherwise; T⁻f = f∘map.
#[derive(Debug, Clone)]
pub struct Pushforward {
    map: PointMap,
}

pub fn pushforward_transfer(map: PointMap) -> TransferHandle {
    Arc::new(Pushforward { map })
}

impl Transfer for Pushforward {
    fn name(&self) -> String {
        "pushforward".into()
    }

    fn direction(&self) -> Direction {
        Direction::Backward
    }

    fn source(&self) -> &Arc<FiniteSpace> {
        &self.map.source
    }

    fn target(&self) -> &Arc<FiniteSpace> {
        &self.map.target
    }

    fn dirac_domain(&self) -> bool {
        self.map.target.len() == 1
    }

    fn eval(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<f64> {
        check_pair(self, mu, nu)?;
        let image = pushforward(&self.map, mu)?;
        check_space(image.space(), nu.space())?;
        let close = image.weights().iter().zip(nu.weights()).all(|(a, b)| (a - b).abs() <= 1e-10);
        Ok(if close { 0.0 } else { f64::INFINITY })
    }

    fn dirac_row(&self, x: usize, sigma: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_len("kernel", sigma, self.map.target.len())?;
        let y = self.map.image[x];
        let exact = sigma.iter().enumerate().all(|(k, s)| (s - if k == y { 1.0 } else { 0.0 }).abs() <= 1e-10);
        Ok((if exact { 0.0 } else { f64::INFINITY }, vec![0.0; sigma.len()]))
    }

    fn backward(&self, g: &[f64]) -> Result<OpValue> {
        check_len("potential", g, self.map.target.len())?;
        let values = self.map.image.iter().map(|&y| g[y]).collect();
        Ok(OpValue::from_argmax(values, &self.map.image, self.map.target.len()))
    }

    fn as_pushforward(&self) -> Option<&PointMap> {
        Some(&self.map)
    }
}
