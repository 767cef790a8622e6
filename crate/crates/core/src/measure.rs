//! Finite spaces, probability measures, potentials, cost matrices and
//! couplings. All types validate on construction and are immutable.

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stand-in for a `+∞` cost entry (forbidden pair).
pub const INF_COST: f64 = 1e18;

/// Anything at or above this is treated as `+∞`.
pub const INF_THRESHOLD: f64 = 1e17;

pub fn is_forbidden(c: f64) -> bool {
    !(c < INF_THRESHOLD)
}

/// Tolerance for probability sums at construction.
pub const SUM_TOL: f64 = 1e-12;

/// Tolerance for coupling marginals.
pub const MARGINAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpace", into = "RawSpace")]
pub struct FiniteSpace {
    id: String,
    points: Vec<String>,
    coords: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct RawSpace {
    id: String,
    points: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coords: Option<Vec<f64>>,
}

impl TryFrom<RawSpace> for FiniteSpace {
    type Error = Error;
    fn try_from(r: RawSpace) -> Result<Self> {
        FiniteSpace::new(r.id, r.points, r.coords)
    }
}

impl From<FiniteSpace> for RawSpace {
    fn from(s: FiniteSpace) -> Self {
        RawSpace { id: s.id, points: s.points, coords: s.coords }
    }
}

impl FiniteSpace {
    pub fn new(id: impl Into<String>, points: Vec<String>, coords: Option<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::input("a space needs at least one point"));
        }
        let mut seen = HashSet::new();
        for p in &points {
            if !seen.insert(p.as_str()) {
                return Err(Error::input(format!("duplicate point label `{p}`")));
            }
        }
        if let Some(c) = &coords {
            if c.len() != points.len() {
                return Err(Error::input("coords and points differ in length"));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::input("coords must be finite"));
            }
            if c.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::input("coords must be strictly increasing"));
            }
        }
        Ok(FiniteSpace { id: id.into(), points, coords })
    }

    /// Points labelled `x0`, `x1`, ...
    pub fn indexed(id: impl Into<String>, n: usize) -> Result<Self> {
        Self::new(id, (0..n).map(|i| format!("x{i}")).collect(), None)
    }

    /// A 1-D grid; labels are the coordinates.
    pub fn grid(id: impl Into<String>, coords: Vec<f64>) -> Result<Self> {
        let points = coords.iter().map(|c| format!("{c}")).collect();
        Self::new(id, points, Some(coords))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn points(&self) -> &[String] {
        &self.points
    }

    pub fn coords(&self) -> Option<&[f64]> {
        self.coords.as_deref()
    }

    pub fn require_coords(&self) -> Result<&[f64]> {
        self.coords().ok_or_else(|| Error::input(format!("space `{}` has no coordinates", self.id)))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.points
            .iter()
            .position(|p| p == label)
            .ok_or_else(|| Error::input(format!("unknown point `{label}` in space `{}`", self.id)))
    }
}

/// Same space: pointer-equal or structurally equal.
pub fn same_space(a: &Arc<FiniteSpace>, b: &Arc<FiniteSpace>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

pub fn check_space(expected: &Arc<FiniteSpace>, found: &Arc<FiniteSpace>) -> Result<()> {
    if same_space(expected, found) {
        Ok(())
    } else {
        Err(Error::SpaceMismatch { expected: expected.id.clone(), found: found.id.clone() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure", into = "RawMeasure")]
pub struct ProbMeasure {
    space: Arc<FiniteSpace>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMeasure {
    space: Arc<FiniteSpace>,
    weights: Vec<f64>,
}

impl TryFrom<RawMeasure> for ProbMeasure {
    type Error = Error;
    fn try_from(r: RawMeasure) -> Result<Self> {
        ProbMeasure::new(r.space, r.weights)
    }
}

impl From<ProbMeasure> for RawMeasure {
    fn from(m: ProbMeasure) -> Self {
        RawMeasure { space: m.space, weights: m.weights }
    }
}

impl ProbMeasure {
    /// Validates (nonnegative, sums to one within `SUM_TOL`) and renormalizes.
    pub fn new(space: Arc<FiniteSpace>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != space.len() {
            return Err(Error::input(format!(
                "measure has {} weights but space `{}` has {} points",
                weights.len(),
                space.id,
                space.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::input("weights must be finite and nonnegative"));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(Error::input(format!("weights sum to {s}, not 1")));
        }
        Ok(Self::renormalized(space, weights))
    }

    /// For solver output: clamps tiny negatives, then normalizes. Fails if
    /// nothing positive is left.
    pub fn from_unnormalized(space: Arc<FiniteSpace>, mut weights: Vec<f64>) -> Result<Self> {
        if weights.len() != space.len() {
            return Err(Error::input("weight length does not match space"));
        }
        for w in weights.iter_mut() {
            if !w.is_finite() {
                return Err(Error::input("non-finite weight"));
            }
            if *w < 0.0 {
                if *w < -1e-9 {
                    return Err(Error::input(format!("negative weight {w}")));
                }
                *w = 0.0;
            }
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::input("zero total mass"));
        }
        Ok(Self::renormalized(space, weights))
    }

    fn renormalized(space: Arc<FiniteSpace>, mut weights: Vec<f64>) -> Self {
        let s: f64 = weights.iter().sum();
        if s != 1.0 {
            weights.iter_mut().for_each(|w| *w /= s);
        }
        ProbMeasure { space, weights }
    }

    pub fn uniform(space: Arc<FiniteSpace>) -> Self {
        let n = space.len();
        ProbMeasure { space, weights: vec![1.0 / n as f64; n] }
    }

    pub fn dirac_at(space: Arc<FiniteSpace>, index: usize) -> Self {
        let mut w = vec![0.0; space.len()];
        w[index] = 1.0;
        ProbMeasure { space, weights: w }
    }

    pub fn space(&self) -> &Arc<FiniteSpace> {
        &self.space
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights.iter().enumerate().filter(|(_, w)| **w > 0.0).map(|(i, _)| i)
    }

    /// ∫ f dμ, skipping zero-weight points so that `0·(±∞) = 0`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).filter(|(w, _)| **w > 0.0).map(|(w, v)| w * v).sum()
    }

    pub fn mean(&self) -> Result<f64> {
        let c = self.space.require_coords()?;
        Ok(self.integrate(c))
    }

    /// Is `self` absolutely continuous with respect to `other`?
    pub fn abs_continuous_wrt(&self, other: &ProbMeasure) -> bool {
        self.weights.iter().zip(&other.weights).all(|(a, b)| *a == 0.0 || *b > 0.0)
    }
}

/// δ at a labelled point.
pub fn dirac(space: &Arc<FiniteSpace>, point: &str) -> Result<ProbMeasure> {
    let i = space.index_of(point)?;
    Ok(ProbMeasure::dirac_at(space.clone(), i))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPotential", into = "RawPotential")]
pub struct Potential {
    space: Arc<FiniteSpace>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawPotential {
    space: Arc<FiniteSpace>,
    values: Vec<f64>,
}

impl TryFrom<RawPotential> for Potential {
    type Error = Error;
    fn try_from(r: RawPotential) -> Result<Self> {
        Potential::new(r.space, r.values)
    }
}

impl From<Potential> for RawPotential {
    fn from(p: Potential) -> Self {
        RawPotential { space: p.space, values: p.values }
    }
}

impl Potential {
    pub fn new(space: Arc<FiniteSpace>, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.len() {
            return Err(Error::input("potential length does not match space"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("potentials must be finite"));
        }
        Ok(Potential { space, values })
    }

    pub fn zeros(space: Arc<FiniteSpace>) -> Self {
        let n = space.len();
        Potential { space, values: vec![0.0; n] }
    }

    pub fn space(&self) -> &Arc<FiniteSpace> {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Dense cost matrix, row-major, `entries[x * m + y] = c(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCost", into = "RawCost")]
pub struct CostMatrix {
    source: Arc<FiniteSpace>,
    target: Arc<FiniteSpace>,
    entries: Vec<f64>,
}

/// Forbidden entries travel as `null` in JSON.
#[derive(Serialize, Deserialize)]
struct RawCost {
    source: Arc<FiniteSpace>,
    target: Arc<FiniteSpace>,
    entries: Vec<Vec<Option<f64>>>,
}

impl TryFrom<RawCost> for CostMatrix {
    type Error = Error;
    fn try_from(r: RawCost) -> Result<Self> {
        let rows = r.entries.into_iter().map(|row| row.into_iter().map(|v| v.unwrap_or(INF_COST)).collect()).collect();
        CostMatrix::from_rows(r.source, r.target, rows)
    }
}

impl From<CostMatrix> for RawCost {
    fn from(c: CostMatrix) -> Self {
        let m = c.target.len();
        let entries =
            c.entries.chunks(m).map(|row| row.iter().map(|v| if is_forbidden(*v) { None } else { Some(*v) }).collect()).collect();
        RawCost { source: c.source, target: c.target, entries }
    }
}

impl CostMatrix {
    pub fn new(source: Arc<FiniteSpace>, target: Arc<FiniteSpace>, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != source.len() * target.len() {
            return Err(Error::input("cost matrix dimensions do not match the spaces"));
        }
        let mut entries = entries;
        for v in entries.iter_mut() {
            if v.is_nan() || *v == f64::NEG_INFINITY || *v <= -INF_THRESHOLD {
                return Err(Error::input("cost entries must be finite or +inf"));
            }
            if is_forbidden(*v) {
                *v = INF_COST;
            }
        }
        Ok(CostMatrix { source, target, entries })
    }

    pub fn from_rows(source: Arc<FiniteSpace>, target: Arc<FiniteSpace>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != source.len() || rows.iter().any(|r| r.len() != target.len()) {
            return Err(Error::input("cost matrix dimensions do not match the spaces"));
        }
        Self::new(source, target, rows.concat())
    }

    pub fn from_fn(source: Arc<FiniteSpace>, target: Arc<FiniteSpace>, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let (n, m) = (source.len(), target.len());
        let entries = (0..n * m).map(|k| f(k / m, k % m)).collect();
        Self::new(source, target, entries)
    }

    /// Square matrix on a freshly indexed space; handy in tests.
    pub fn square(rows: Vec<Vec<f64>>) -> Result<Self> {
        let s = Arc::new(FiniteSpace::indexed("X", rows.len())?);
        Self::from_rows(s.clone(), s, rows)
    }

    pub fn source(&self) -> &Arc<FiniteSpace> {
        &self.source
    }

    pub fn target(&self) -> &Arc<FiniteSpace> {
        &self.target
    }

    pub fn rows(&self) -> usize {
        self.source.len()
    }

    pub fn cols(&self) -> usize {
        self.target.len()
    }

    pub fn is_square(&self) -> bool {
        same_space(&self.source, &self.target)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.entries[x * self.target.len() + y]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        let m = self.target.len();
        &self.entries[x * m..(x + 1) * m]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.cols()).map(|r| r.to_vec()).collect()
    }

    pub fn has_forbidden(&self) -> bool {
        self.entries.iter().any(|v| is_forbidden(*v))
    }

    /// Entrywise map; forbidden entries stay forbidden.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> CostMatrix {
        let entries = self.entries.iter().map(|v| if is_forbidden(*v) { INF_COST } else { f(*v) }).collect();
        CostMatrix { source: self.source.clone(), target: self.target.clone(), entries }
    }

    pub fn max_finite(&self) -> Option<f64> {
        self.entries.iter().copied().filter(|v| !is_forbidden(*v)).reduce(f64::max)
    }

    pub fn min_finite(&self) -> Option<f64> {
        self.entries.iter().copied().filter(|v| !is_forbidden(*v)).reduce(f64::min)
    }

    /// ⟨c, π⟩ for a plan given row-major.
    pub fn pair(&self, plan: &[f64]) -> f64 {
        self.entries
            .iter()
            .zip(plan)
            .filter(|(_, p)| **p > 0.0)
            .map(|(c, p)| if is_forbidden(*c) { f64::INFINITY } else { c * p })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCoupling", into = "RawCoupling")]
pub struct Coupling {
    matrix: Vec<f64>,
    row_marginal: ProbMeasure,
    col_marginal: ProbMeasure,
}

#[derive(Serialize, Deserialize)]
struct RawCoupling {
    source: Arc<FiniteSpace>,
    target: Arc<FiniteSpace>,
    matrix: Vec<Vec<f64>>,
}

impl TryFrom<RawCoupling> for Coupling {
    type Error = Error;
    fn try_from(r: RawCoupling) -> Result<Self> {
        if r.matrix.len() != r.source.len() || r.matrix.iter().any(|row| row.len() != r.target.len()) {
            return Err(Error::input("coupling dimensions do not match the spaces"));
        }
        Coupling::from_matrix(r.source, r.target, r.matrix.concat())
    }
}

impl From<Coupling> for RawCoupling {
    fn from(c: Coupling) -> Self {
        let m = c.col_marginal.len();
        RawCoupling {
            source: c.row_marginal.space.clone(),
            target: c.col_marginal.space.clone(),
            matrix: c.matrix.chunks(m).map(|r| r.to_vec()).collect(),
        }
    }
}

impl Coupling {
    /// A plan with prescribed marginals; fails if the sums are off by more
    /// than `MARGINAL_TOL`.
    pub fn new(mu: &ProbMeasure, nu: &ProbMeasure, matrix: Vec<f64>) -> Result<Self> {
        let (n, m) = (mu.len(), nu.len());
        let matrix = Self::clean(matrix, n * m)?;
        for x in 0..n {
            let s: f64 = matrix[x * m..(x + 1) * m].iter().sum();
            if (s - mu.weights[x]).abs() > MARGINAL_TOL {
                return Err(Error::InvalidCoupling(format!("row {x} sums to {s}, marginal is {}", mu.weights[x])));
            }
        }
        for y in 0..m {
            let s: f64 = (0..n).map(|x| matrix[x * m + y]).sum();
            if (s - nu.weights[y]).abs() > MARGINAL_TOL {
                return Err(Error::InvalidCoupling(format!("column {y} sums to {s}, marginal is {}", nu.weights[y])));
            }
        }
        Ok(Coupling { matrix, row_marginal: mu.clone(), col_marginal: nu.clone() })
    }

    /// Marginals are read off the matrix, which must have total mass one.
    pub fn from_matrix(source: Arc<FiniteSpace>, target: Arc<FiniteSpace>, matrix: Vec<f64>) -> Result<Self> {
        let (n, m) = (source.len(), target.len());
        let matrix = Self::clean(matrix, n * m)?;
        let rows: Vec<f64> = (0..n).map(|x| matrix[x * m..(x + 1) * m].iter().sum()).collect();
        let cols: Vec<f64> = (0..m).map(|y| (0..n).map(|x| matrix[x * m + y]).sum()).collect();
        let total: f64 = rows.iter().sum();
        if (total - 1.0).abs() > MARGINAL_TOL {
            return Err(Error::InvalidCoupling(format!("total mass {total}")));
        }
        let mu = ProbMeasure::renormalized(source, rows);
        let nu = ProbMeasure::renormalized(target, cols);
        Ok(Coupling { matrix, row_marginal: mu, col_marginal: nu })
    }

    fn clean(mut matrix: Vec<f64>, len: usize) -> Result<Vec<f64>> {
        if matrix.len() != len {
            return Err(Error::InvalidCoupling("wrong number of entries".into()));
        }
        for v in matrix.iter_mut() {
            if !v.is_finite() || *v < -1e-14 {
                return Err(Error::InvalidCoupling(format!("entry {v} is not a nonnegative number")));
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Ok(matrix)
    }

    pub fn product(mu: &ProbMeasure, nu: &ProbMeasure) -> Self {
        let matrix = mu.weights.iter().flat_map(|a| nu.weights.iter().map(move |b| a * b)).collect();
        Coupling { matrix, row_marginal: mu.clone(), col_marginal: nu.clone() }
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.matrix[x * self.col_marginal.len() + y]
    }

    pub fn row_marginal(&self) -> &ProbMeasure {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &ProbMeasure {
        &self.col_marginal
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.matrix.chunks(self.col_marginal.len()).map(|r| r.to_vec()).collect()
    }
}

/// One row kernel `π_x` of a disintegration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub measure: ProbMeasure,
    /// Row had zero mass; the kernel is the uniform placeholder.
    pub degenerate: bool,
}

pub fn disintegrate(pi: &Coupling) -> Result<Vec<Kernel>> {
    let (n, m) = (pi.row_marginal.len(), pi.col_marginal.len());
    let target = pi.col_marginal.space.clone();
    let mut out = Vec::with_capacity(n);
    for x in 0..n {
        let row = &pi.matrix[x * m..(x + 1) * m];
        let s: f64 = row.iter().sum();
        if s <= 0.0 {
            out.push(Kernel { measure: ProbMeasure::uniform(target.clone()), degenerate: true });
        } else {
            let w = row.iter().map(|v| v / s).collect();
            out.push(Kernel { measure: ProbMeasure::renormalized(target.clone(), w), degenerate: false });
        }
    }
    let rebuilt = reassemble(&pi.row_marginal, &out)?;
    for (a, b) in rebuilt.col_marginal.weights.iter().zip(&pi.col_marginal.weights) {
        if (a - b).abs() > MARGINAL_TOL {
            return Err(Error::InvalidCoupling("kernels do not reproduce the column marginal".into()));
        }
    }
    Ok(out)
}

/// `π(x, ·) = μ(x) π_x`.
pub fn reassemble(mu: &ProbMeasure, kernels: &[Kernel]) -> Result<Coupling> {
    if kernels.len() != mu.len() {
        return Err(Error::input("one kernel per source point is required"));
    }
    let target = kernels.first().map(|k| k.measure.space.clone()).ok_or_else(|| Error::input("no kernels"))?;
    let m = target.len();
    let mut matrix = vec![0.0; mu.len() * m];
    for (x, k) in kernels.iter().enumerate() {
        check_space(&target, &k.measure.space)?;
        for y in 0..m {
            matrix[x * m + y] = mu.weights[x] * k.measure.weights[y];
        }
    }
    let cols: Vec<f64> = (0..m).map(|y| (0..mu.len()).map(|x| matrix[x * m + y]).sum()).collect();
    let nu = ProbMeasure::renormalized(target, cols);
    Coupling::new(mu, &nu, matrix)
}

/// A map between finite spaces, stored as target indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMap {
    pub source: Arc<FiniteSpace>,
    pub target: Arc<FiniteSpace>,
    pub image: Vec<usize>,
}

impl PointMap {
    pub fn new(source: Arc<FiniteSpace>, target: Arc<FiniteSpace>, image: Vec<usize>) -> Result<Self> {
        if image.len() != source.len() {
            return Err(Error::input("map must be defined on every source point"));
        }
        if image.iter().any(|&y| y >= target.len()) {
            return Err(Error::input("map image outside the target space"));
        }
        Ok(PointMap { source, target, image })
    }

    pub fn from_labels(source: Arc<FiniteSpace>, target: Arc<FiniteSpace>, table: &[(String, String)]) -> Result<Self> {
        let mut image = vec![usize::MAX; source.len()];
        for (a, b) in table {
            image[source.index_of(a)?] = target.index_of(b)?;
        }
        if image.contains(&usize::MAX) {
            return Err(Error::input("map is not total on the source space"));
        }
        Self::new(source, target, image)
    }

    pub fn identity(space: Arc<FiniteSpace>) -> Self {
        let image = (0..space.len()).collect();
        PointMap { source: space.clone(), target: space, image }
    }
}

pub fn pushforward(map: &PointMap, mu: &ProbMeasure) -> Result<ProbMeasure> {
    check_space(&map.source, &mu.space)?;
    let mut w = vec![0.0; map.target.len()];
    for (x, &y) in map.image.iter().enumerate() {
        w[y] += mu.weights[x];
    }
    Ok(ProbMeasure::renormalized(map.target.clone(), w))
}

/// ½‖μ − ν‖₁.
pub fn total_variation(mu: &ProbMeasure, nu: &ProbMeasure) -> Result<f64> {
    check_space(&mu.space, &nu.space)?;
    Ok(0.5 * mu.weights.iter().zip(&nu.weights).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// KL(μ‖ν) = Σ μ log(μ/ν); +∞ unless μ ≪ ν.
pub fn relative_entropy(mu: &ProbMeasure, nu: &ProbMeasure) -> Result<f64> {
    check_space(&mu.space, &nu.space)?;
    Ok(kl_raw(&mu.weights, &nu.weights))
}

/// Σ p log(p/q) on raw weights, with 0 log 0 = 0.
pub fn kl_raw(p: &[f64], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for (a, b) in p.iter().zip(q) {
        if *a > 0.0 {
            if *b <= 0.0 {
                return f64::INFINITY;
            }
            s += a * (a / b).ln();
        }
    }
    s
}
