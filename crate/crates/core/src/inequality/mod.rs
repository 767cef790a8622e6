//! Transport-entropy inequalities 𝓕 ≤ λ(𝓔⋆𝓣) through duality.
//!
//! Every check compares two routes to the same number. The primal route
//! minimizes a difference of convex functions of σ over a dense simplex grid
//! and refines the best grid point by pattern search; the dual route
//! minimizes a nonconvex criterion over potentials by seeded multistart
//! pattern search. Swapping the two infima is exact, so the values agree up
//! to search error, and in particular their signs agree.
//!
//! With 𝓕₂(σ,ν) = sup_j sup_f ⟨f,ν⟩ − ⟨F₂ⱼ⁻f, σ⟩ the back-back value is
//!
//!   inf_σ 𝓕₁(μ,σ) − 𝓕₂(σ,ν) = inf_{f,j} −𝓕₁*_μ(−F₂ⱼ⁻f) − ⟨f,ν⟩,
//!
//! and with K(h) = sup_σ ⟨h,σ⟩ − 𝓕₂(σ,ν) the forward-back value is
//!
//!   inf_σ 𝓕₁(μ,σ) − 𝓕₂(σ,ν) = inf_g −𝓕₁*_μ(−g) + K(−g),
//!
//! which is −𝓕₁*_μ(−g) − ⟨T⁺g, ν⟩ for a forward linear 𝓕₂.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::catalog::{OpValue, TransferHandle};
use crate::entropic::{convex_convolve, scale_convex, ConvexHandle, ConvexTransfer};
use crate::error::{Error, Result};
use crate::measure::{check_space, FiniteSpace, ProbMeasure};
use crate::par::{map_range, Execution};
use crate::rng;
use crate::solvers::local::{pattern_minimize, simplex_grid, simplex_grid_size, simplex_pattern_minimize, PatternConfig};

mod maurey;

pub use maurey::{log_mean_exp_neg, maurey_check, Maurey};

/// The transfer on the small side of an inequality, evaluated through its
/// backward operators.
#[derive(Debug, Clone)]
pub enum Lhs {
    Linear(TransferHandle),
    Convex(ConvexHandle),
}

impl Lhs {
    pub fn name(&self) -> String {
        match self {
            Lhs::Linear(t) => t.name(),
            Lhs::Convex(t) => t.name(),
        }
    }

    pub fn source(&self) -> &Arc<FiniteSpace> {
        match self {
            Lhs::Linear(t) => t.source(),
            Lhs::Convex(t) => t.source(),
        }
    }

    pub fn target(&self) -> &Arc<FiniteSpace> {
        match self {
            Lhs::Linear(t) => t.target(),
            Lhs::Convex(t) => t.target(),
        }
    }

    pub fn eval(&self, a: &ProbMeasure, b: &ProbMeasure) -> Result<f64> {
        match self {
            Lhs::Linear(t) => t.eval(a, b),
            Lhs::Convex(t) => t.eval(a, b),
        }
    }

    /// The family indices; a linear transfer is its own single member.
    pub fn indices(&self) -> Vec<Option<f64>> {
        match self {
            Lhs::Linear(_) => vec![None],
            Lhs::Convex(t) => t.index_grid().into_iter().map(Some).collect(),
        }
    }

    pub fn member(&self, index: Option<f64>, f: &[f64]) -> Result<OpValue> {
        match (self, index) {
            (Lhs::Linear(t), _) => t.backward(f),
            (Lhs::Convex(t), Some(i)) => t.member(i, f),
            (Lhs::Convex(t), None) => Err(Error::input(format!("{} needs a family index", t.name()))),
        }
    }

    /// sup_σ ⟨h,σ⟩ − 𝓕(ν,σ).
    pub fn conj_second(&self, nu: &ProbMeasure, h: &[f64]) -> Result<f64> {
        match self {
            Lhs::Linear(t) => Ok(t.conj_mu(nu, h)?.0),
            Lhs::Convex(t) => Ok(t.conj_mu(nu, h)?.0),
        }
    }

    fn has_backward(&self) -> bool {
        match self {
            Lhs::Linear(t) => t.direction().has_backward(),
            Lhs::Convex(t) => !t.index_grid().is_empty(),
        }
    }
}

/// A transfer subtracted in the forward-back configuration, with σ in the
/// first slot.
#[derive(Debug, Clone)]
pub enum ForwardSide {
    /// A forward linear 𝓣(σ,ν).
    Forward(TransferHandle),
    /// 𝓕(ν,σ) for a backward 𝓕.
    Reversed(Lhs),
}

impl ForwardSide {
    fn sigma_space(&self) -> &Arc<FiniteSpace> {
        match self {
            ForwardSide::Forward(t) => t.source(),
            ForwardSide::Reversed(l) => l.target(),
        }
    }

    fn anchor_space(&self) -> &Arc<FiniteSpace> {
        match self {
            ForwardSide::Forward(t) => t.target(),
            ForwardSide::Reversed(l) => l.source(),
        }
    }

    pub fn eval(&self, sigma: &ProbMeasure, nu: &ProbMeasure) -> Result<f64> {
        match self {
            ForwardSide::Forward(t) => t.eval(sigma, nu),
            ForwardSide::Reversed(l) => l.eval(nu, sigma),
        }
    }

    /// K(h) = sup_σ ⟨h,σ⟩ − 𝓕₂(σ,ν).
    pub fn conj(&self, nu: &ProbMeasure, h: &[f64]) -> Result<f64> {
        match self {
            ForwardSide::Forward(t) => Ok(t.conj_nu(nu, h)?.0),
            ForwardSide::Reversed(l) => l.conj_second(nu, h),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSettings {
    /// Grid spacing; by default 1/256 on two points and 1/64 on three.
    pub grid_h: Option<f64>,
    /// Largest grid (in points) swept before falling back to descent.
    pub grid_cap: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Random dual starts are uniform in [−r, r].
    pub start_radius: f64,
    pub pattern: PatternConfig,
    pub tol: f64,
    pub exec: Execution,
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings {
            grid_h: None,
            grid_cap: 600_000,
            restarts: 32,
            seed: 0,
            start_radius: 4.0,
            pattern: PatternConfig::default(),
            tol: 1e-6,
            exec: Execution::default(),
        }
    }
}

impl SearchSettings {
    pub fn validate(&self) -> Result<()> {
        if let Some(h) = self.grid_h {
            if !(h > 0.0 && h <= 1.0) {
                return Err(Error::input("grid spacing must lie in (0, 1]"));
            }
        }
        if self.restarts == 0 || !(self.tol >= 0.0) || !(self.start_radius > 0.0) {
            return Err(Error::input("search needs restarts >= 1, tol >= 0 and a positive start radius"));
        }
        Ok(())
    }

    /// Grid resolution m (spacing 1/m) for a block of n points, if the grid
    /// path applies.
    fn resolution(&self, n: usize) -> Option<usize> {
        match (n, self.grid_h) {
            (1, _) => Some(1),
            (2 | 3, Some(h)) => Some((1.0 / h).round().max(1.0) as usize),
            (2, None) => Some(256),
            (3, None) => Some(64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchPath {
    /// Exhaustive grid plus local refinement.
    Grid,
    /// Multistart descent only; a weaker certificate.
    Descent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalSearch {
    pub value: f64,
    /// The minimizing σ (blocks concatenated).
    pub point: Vec<f64>,
    pub path: SearchPath,
    pub grid_h: Option<f64>,
    pub grid_points: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSearch {
    pub value: f64,
    pub witness: Vec<f64>,
    pub index: Option<f64>,
    pub restarts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityValues {
    pub primal: PrimalSearch,
    pub dual: DualSearch,
}

impl DualityValues {
    pub fn discrepancy(&self) -> f64 {
        (self.primal.value - self.dual.value).abs()
    }
}

fn measure_of(space: &Arc<FiniteSpace>, w: &[f64]) -> Option<ProbMeasure> {
    ProbMeasure::from_unnormalized(space.clone(), w.iter().map(|v| v.max(0.0)).collect()).ok()
}

fn nan_to_inf(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

fn argmin(values: &[f64]) -> usize {
    (0..values.len()).fold(0, |b, i| if values[i] < values[b] { i } else { b })
}

/// Minimum of `f` over the simplex on `n` points: grid sweep and refinement
/// when the grid is affordable, seeded multistart descent otherwise.
pub(crate) fn simplex_search<F>(f: F, n: usize, settings: &SearchSettings) -> PrimalSearch
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let f = |x: &[f64]| nan_to_inf(f(x));
    let mut warnings = Vec::new();
    let grid = settings.resolution(n).filter(|&m| simplex_grid_size(n, m) <= settings.grid_cap);
    if let Some(m) = grid {
        let points = simplex_grid(n, m, settings.grid_cap).expect("grid size checked");
        let values = map_range(settings.exec, points.len(), |k| f(&points[k]));
        let best = argmin(&values);
        let pat = PatternConfig { initial_step: 1.0 / m as f64, ..settings.pattern.clone() };
        let local = simplex_pattern_minimize(f, points[best].clone(), &[n], &pat);
        let (value, point) =
            if local.value < values[best] { (local.value, local.point) } else { (values[best], points[best].clone()) };
        return PrimalSearch {
            value,
            point,
            path: SearchPath::Grid,
            grid_h: Some(1.0 / m as f64),
            grid_points: points.len(),
            warnings,
        };
    }
    warnings.push(format!("{n}-point simplex: grid skipped, multistart descent only"));
    let starts = primal_starts(n, settings);
    let runs =
        map_range(settings.exec, starts.len(), |k| simplex_pattern_minimize(f, starts[k].clone(), &[n], &settings.pattern));
    let best = argmin(&runs.iter().map(|r| r.value).collect::<Vec<_>>());
    PrimalSearch {
        value: runs[best].value,
        point: runs[best].point.clone(),
        path: SearchPath::Descent,
        grid_h: None,
        grid_points: 0,
        warnings,
    }
}

/// Uniform, the Dirac masses, then seeded random points.
fn primal_starts(n: usize, settings: &SearchSettings) -> Vec<Vec<f64>> {
    let mut starts = vec![vec![1.0 / n as f64; n]];
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        starts.push(e);
    }
    let mut r = rng::stream(settings.seed, 11);
    while starts.len() < n + 1 + settings.restarts {
        starts.push(rng::simplex_point(&mut r, n));
    }
    starts
}

/// Minimum over potentials and family indices of `f(index, g)`, from the
/// zero potential and `restarts − 1` seeded random ones per index.
pub(crate) fn potential_search<F>(f: F, n: usize, indices: &[Option<f64>], settings: &SearchSettings) -> DualSearch
where
    F: Fn(Option<f64>, &[f64]) -> f64 + Sync + Send,
{
    let mut r = rng::stream(settings.seed, 12);
    let mut starts = vec![vec![0.0; n]];
    while starts.len() < settings.restarts {
        starts.push(rng::uniform_vec(&mut r, n, -settings.start_radius, settings.start_radius));
    }
    let jobs = indices.len() * starts.len();
    let runs = map_range(settings.exec, jobs, |k| {
        let (i, s) = (k / starts.len(), k % starts.len());
        let idx = indices[i];
        pattern_minimize(|g| nan_to_inf(f(idx, g)), starts[s].clone(), &settings.pattern)
    });
    let best = argmin(&runs.iter().map(|r| r.value).collect::<Vec<_>>());
    DualSearch {
        value: runs[best].value,
        witness: runs[best].point.clone(),
        index: indices[best / starts.len()],
        restarts: starts.len(),
    }
}

/// inf_σ 𝓕₁(μ,σ) − 𝓕₂(σ,ν) for a backward 𝓕₂, by both routes.
pub fn back_back_dual(
    first: &dyn ConvexTransfer,
    second: &Lhs,
    mu: &ProbMeasure,
    nu: &ProbMeasure,
    settings: &SearchSettings,
) -> Result<DualityValues> {
    settings.validate()?;
    check_space(first.source(), mu.space())?;
    check_space(first.target(), second.source())?;
    check_space(second.target(), nu.space())?;
    if !second.has_backward() {
        return Err(Error::input(format!("{} has no backward operators", second.name())));
    }
    let mid = first.target().clone();
    let primal = simplex_search(
        |w| {
            let Some(s) = measure_of(&mid, w) else { return f64::INFINITY };
            match (first.eval(mu, &s), second.eval(&s, nu)) {
                (Ok(a), Ok(b)) => a - b,
                _ => f64::INFINITY,
            }
        },
        mid.len(),
        settings,
    );
    let dual = potential_search(
        |idx, f| {
            let Ok(op) = second.member(idx, f) else { return f64::INFINITY };
            let h: Vec<f64> = op.values.iter().map(|v| -v).collect();
            match first.conj_mu(mu, &h) {
                Ok((c, _)) => -c - nu.integrate(f),
                Err(_) => f64::INFINITY,
            }
        },
        nu.len(),
        &second.indices(),
        settings,
    );
    Ok(DualityValues { primal, dual })
}

/// inf_σ 𝓕₁(μ,σ) − 𝓕₂(σ,ν) for a forward 𝓕₂, by both routes. The dual
/// witness is g, with the criterion −𝓕₁*_μ(−g) + K(−g).
pub fn forward_back_dual(
    first: &dyn ConvexTransfer,
    second: &ForwardSide,
    mu: &ProbMeasure,
    nu: &ProbMeasure,
    settings: &SearchSettings,
) -> Result<DualityValues> {
    settings.validate()?;
    check_space(first.source(), mu.space())?;
    check_space(first.target(), second.sigma_space())?;
    check_space(second.anchor_space(), nu.space())?;
    if let ForwardSide::Forward(t) = second {
        if !t.direction().has_forward() {
            return Err(Error::input(format!("{} has no forward operator", t.name())));
        }
    }
    let mid = first.target().clone();
    let primal = simplex_search(
        |w| {
            let Some(s) = measure_of(&mid, w) else { return f64::INFINITY };
            match (first.eval(mu, &s), second.eval(&s, nu)) {
                (Ok(a), Ok(b)) => a - b,
                _ => f64::INFINITY,
            }
        },
        mid.len(),
        settings,
    );
    let dual = potential_search(
        |_, g| {
            let h: Vec<f64> = g.iter().map(|v| -v).collect();
            match (first.conj_mu(mu, &h), second.conj(nu, &h)) {
                (Ok((c, _)), Ok(k)) => -c + k,
                _ => f64::INFINITY,
            }
        },
        mid.len(),
        &[None],
        settings,
    );
    Ok(DualityValues { primal, dual })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    /// 𝓕(σ,ν) ≤ λ(𝓔⋆𝓣)(μ,σ) for all σ.
    BackwardBackward,
    /// 𝓕(ν,σ) ≤ λ(𝓔⋆𝓣)(μ,σ) for all σ.
    ForwardBackward,
    /// 𝓕(σ₁,σ₂) ≤ λ₁(𝓣₁⋆𝓗)(σ₁,μ) + λ₂(𝓣₂⋆𝓗)(σ₂,ν) for all σ₁, σ₂.
    Maurey,
}

#[derive(Debug, Clone)]
pub enum Rhs {
    /// λ(𝓔⋆𝓣)(μ,·), or λ𝓔(μ,·) without a link.
    Entropic { entropy: ConvexHandle, link: Option<TransferHandle>, lambda: f64 },
    /// λ₁(𝓣₁⋆𝓗)(·,μ) + λ₂(𝓣₂⋆𝓗)(·,ν) for forward linear 𝓣ᵢ.
    Maurey { t1: TransferHandle, t2: TransferHandle, lambda1: f64, lambda2: f64 },
}

#[derive(Debug, Clone)]
pub struct InequalitySpec {
    pub form: Form,
    pub lhs: Lhs,
    pub rhs: Rhs,
    pub mu: ProbMeasure,
    pub nu: ProbMeasure,
    pub settings: SearchSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Holds,
    Violated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub form: Form,
    pub status: Status,
    /// inf over σ of the right side minus the left side.
    pub primal_gap: f64,
    /// inf of the dual criterion margin. For the Maurey form this is
    /// 1 − (largest product of exponential integrals).
    pub dual_gap: f64,
    /// The dual infimum on the primal scale (−log of the product for the
    /// Maurey form, equal to `dual_gap` otherwise).
    pub dual_value: f64,
    pub sign_consistent: bool,
    /// Worst σ (two measures for the Maurey form).
    pub sigma_witness: Vec<Vec<f64>>,
    pub g_witness: Vec<f64>,
    pub index_witness: Option<f64>,
    pub path: SearchPath,
    pub grid_h: Option<f64>,
    pub grid_points: usize,
    pub restarts: usize,
    pub seed: u64,
    pub tol: f64,
    pub warnings: Vec<String>,
}

impl GapReport {
    pub fn holds(&self) -> bool {
        self.status == Status::Holds
    }
}

pub(crate) fn report(form: Form, values: DualityValues, dual_gap: f64, blocks: &[usize], settings: &SearchSettings) -> GapReport {
    let tol = settings.tol;
    let p = values.primal.value;
    let status = if p >= -tol { Status::Holds } else { Status::Violated };
    let mut sigma_witness = Vec::new();
    let mut start = 0;
    for &b in blocks {
        sigma_witness.push(values.primal.point[start..start + b].to_vec());
        start += b;
    }
    GapReport {
        form,
        status,
        primal_gap: p,
        dual_gap,
        dual_value: values.dual.value,
        sign_consistent: (p >= -tol) == (dual_gap >= -tol),
        sigma_witness,
        g_witness: values.dual.witness,
        index_witness: values.dual.index,
        path: values.primal.path,
        grid_h: values.primal.grid_h,
        grid_points: values.primal.grid_points,
        restarts: values.dual.restarts,
        seed: settings.seed,
        tol,
        warnings: values.primal.warnings,
    }
}

/// Checks the declared inequality as stated and reports both routes.
pub fn check_te_inequality(spec: &InequalitySpec) -> Result<GapReport> {
    let settings = &spec.settings;
    match (&spec.form, &spec.rhs) {
        (Form::Maurey, Rhs::Maurey { t1, t2, lambda1, lambda2 }) => {
            let m = Maurey::new(spec.lhs.clone(), t1.clone(), t2.clone(), *lambda1, *lambda2, spec.mu.clone(), spec.nu.clone())?;
            maurey_check(&m, settings)
        }
        (Form::BackwardBackward | Form::ForwardBackward, Rhs::Entropic { entropy, link, lambda }) => {
            let base: ConvexHandle = match link {
                Some(t) => convex_convolve(entropy.clone(), t.clone())?,
                None => entropy.clone(),
            };
            let first = scale_convex(*lambda, base)?;
            let values = match spec.form {
                Form::ForwardBackward => {
                    forward_back_dual(first.as_ref(), &ForwardSide::Reversed(spec.lhs.clone()), &spec.mu, &spec.nu, settings)?
                }
                _ => match &spec.lhs {
                    Lhs::Linear(t) if !t.direction().has_backward() => {
                        forward_back_dual(first.as_ref(), &ForwardSide::Forward(t.clone()), &spec.mu, &spec.nu, settings)?
                    }
                    lhs => back_back_dual(first.as_ref(), lhs, &spec.mu, &spec.nu, settings)?,
                },
            };
            let blocks = [first.target().len()];
            let gap = values.dual.value;
            Ok(report(spec.form, values, gap, &blocks, settings))
        }
        _ => Err(Error::input("inequality form and right-hand side do not match")),
    }
}
