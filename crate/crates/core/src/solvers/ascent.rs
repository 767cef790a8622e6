//! Concave maximization over the simplex or over potentials.
//!
//! Two stages: Kelley cutting planes give a certified upper bound and a good
//! iterate, then projected gradient polishing (Barzilai–Borwein steps with
//! Armijo backtracking by default) sharpens smooth objectives where plain
//! cutting planes converge slowly. The reported `upper_bound` is certified
//! over the search domain; for potentials that domain is a cube of radius
//! `box_radius`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{FiniteSpace, Potential, ProbMeasure};
use crate::rng;
use crate::solvers::kelley::{CuttingPlaneMaster, Polytope};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "rule", content = "step")]
pub enum StepRule {
    /// Barzilai–Borwein with Armijo backtracking.
    Adaptive,
    Fixed(f64),
    /// `step / sqrt(k + 1)`.
    Diminishing(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscentConfig {
    /// Cutting-plane iterations.
    pub max_iters: usize,
    pub tol: f64,
    pub step_rule: StepRule,
    pub seed: u64,
    /// Extra polishing runs from seeded random starts.
    pub restarts: usize,
    pub polish_iters: usize,
    pub box_radius: f64,
    /// Values above this are reported as unbounded.
    pub ceiling: f64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        AscentConfig {
            max_iters: 400,
            tol: 1e-10,
            step_rule: StepRule::Adaptive,
            seed: 0,
            restarts: 0,
            polish_iters: 3000,
            box_radius: 50.0,
            ceiling: 1e12,
        }
    }
}

impl AscentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(Error::input("ascent config needs tol > 0 and max_iters >= 1"));
        }
        if !(self.box_radius > 0.0) {
            return Err(Error::input("box_radius must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscentResult {
    pub point: Vec<f64>,
    pub value: f64,
    /// Certified upper bound over the search domain.
    pub upper_bound: f64,
    pub iterations: usize,
    /// Norm of the projected gradient step at the returned point.
    pub stationarity: f64,
    pub converged: bool,
}

impl AscentResult {
    pub fn gap(&self) -> f64 {
        self.upper_bound - self.value
    }
}

/// Projection onto the probability simplex.
pub fn project_simplex(v: &mut [f64]) {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
}

#[derive(Debug, Clone, Copy)]
enum Domain {
    Simplex,
    Cube { radius: f64, pin: Option<usize> },
}

impl Domain {
    fn project(&self, x: &mut [f64]) {
        match *self {
            Domain::Simplex => project_simplex(x),
            Domain::Cube { radius, pin } => {
                if let Some(p) = pin {
                    let k = x[p];
                    x.iter_mut().for_each(|v| *v -= k);
                }
                x.iter_mut().for_each(|v| *v = v.clamp(-radius, radius));
            }
        }
    }

    fn center(&self, dim: usize) -> Vec<f64> {
        match self {
            Domain::Simplex => vec![1.0 / dim as f64; dim],
            Domain::Cube { .. } => vec![0.0; dim],
        }
    }

    fn polytope(&self, dim: usize) -> Polytope {
        match *self {
            Domain::Simplex => Polytope::simplex(dim),
            Domain::Cube { radius, pin } => Polytope::cube(dim, radius, pin),
        }
    }

    fn random_point(&self, dim: usize, seed: u64, k: u64) -> Vec<f64> {
        let mut r = rng::stream(seed, 0x5eed_0000 + k);
        match *self {
            Domain::Simplex => rng::simplex_point(&mut r, dim),
            Domain::Cube { radius, .. } => {
                let s = radius.min(2.0);
                let mut x = rng::uniform_vec(&mut r, dim, -s, s);
                self.project(&mut x);
                x
            }
        }
    }
}

fn finite(v: f64, g: &[f64]) -> bool {
    v.is_finite() && g.iter().all(|x| x.is_finite())
}

/// Evaluates, nudging toward the domain center if the oracle returns
/// non-finite output (typical on the simplex boundary).
fn eval_safe<F>(oracle: &F, x: &[f64], center: &[f64]) -> Option<(Vec<f64>, f64, Vec<f64>)>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (v, g) = oracle(x);
    if finite(v, &g) {
        return Some((x.to_vec(), v, g));
    }
    for eps in [1e-12, 1e-9, 1e-6, 1e-3, 1e-1] {
        let y: Vec<f64> = x.iter().zip(center).map(|(a, c)| (1.0 - eps) * a + eps * c).collect();
        let (v, g) = oracle(&y);
        if finite(v, &g) {
            return Some((y, v, g));
        }
    }
    None
}

struct Polished {
    x: Vec<f64>,
    v: f64,
    stationarity: f64,
}

fn polish<F>(oracle: &F, domain: Domain, x0: &[f64], cfg: &AscentConfig) -> Option<Polished>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let center = domain.center(x0.len());
    let mut x = x0.to_vec();
    domain.project(&mut x);
    let (mut x, mut v, mut g) = eval_safe(oracle, &x, &center)?;
    let mut best = (x.clone(), v);
    let mut step = 1.0;
    let mut stall = 0;
    for k in 0..cfg.polish_iters {
        let trial = |h: f64| {
            let mut y: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + h * b).collect();
            domain.project(&mut y);
            y
        };
        let (xn, vn, gn) = match cfg.step_rule {
            StepRule::Adaptive => {
                let mut h = step;
                let mut accepted = None;
                while h > 1e-18 {
                    let y = trial(h);
                    let (vy, gy) = oracle(&y);
                    let lin: f64 = g.iter().zip(y.iter().zip(&x)).map(|(gi, (a, b))| gi * (a - b)).sum();
                    if finite(vy, &gy) && vy >= v + 1e-4 * lin {
                        accepted = Some((y, vy, gy));
                        break;
                    }
                    h *= 0.5;
                }
                match accepted {
                    Some(a) => a,
                    None => break,
                }
            }
            StepRule::Fixed(h) | StepRule::Diminishing(h) => {
                let h = if let StepRule::Diminishing(_) = cfg.step_rule { h / ((k + 1) as f64).sqrt() } else { h };
                let y = trial(h);
                let (vy, gy) = oracle(&y);
                if !finite(vy, &gy) {
                    break;
                }
                (y, vy, gy)
            }
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        step = if sy < 0.0 { (ss / -sy).clamp(1e-10, 1e10) } else { (step * 2.0).min(1e10) };
        let improvement = vn - v;
        x = xn;
        v = vn;
        g = gn;
        if v > best.1 {
            best = (x.clone(), v);
        }
        if ss.sqrt() <= 1e-15 || improvement.abs() <= 1e-16 * (1.0 + v.abs()) {
            stall += 1;
            if stall >= 5 {
                break;
            }
        } else {
            stall = 0;
        }
    }
    // stationarity at the best point: length of the projected unit step
    let (bx, bv) = best;
    let (_, bg) = oracle(&bx);
    let mut y: Vec<f64> = bx.iter().zip(&bg).map(|(a, b)| a + b).collect();
    domain.project(&mut y);
    let stationarity = y.iter().zip(&bx).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Some(Polished { x: bx, v: bv, stationarity })
}

fn maximize<F>(oracle: &F, dim: usize, domain: Domain, x0: Vec<f64>, cfg: &AscentConfig) -> Result<AscentResult>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    cfg.validate()?;
    let center = domain.center(dim);
    let mut master = CuttingPlaneMaster::new(1, &domain.polytope(dim));
    let mut x = x0;
    domain.project(&mut x);
    let mut best_x = x.clone();
    let mut best_v = f64::NEG_INFINITY;
    let mut ub = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..cfg.max_iters {
        iterations = it + 1;
        let Some((xe, v, s)) = eval_safe(oracle, &x, &center) else { break };
        if v > best_v {
            best_v = v;
            best_x = xe.clone();
        }
        if best_v > cfg.ceiling {
            return Err(Error::Unbounded(format!("objective exceeded {}", cfg.ceiling)));
        }
        let neg: Vec<f64> = s.iter().map(|a| -a).collect();
        master.add_cut_at(0, &xe, -v, &neg);
        let sol = master.solve()?;
        ub = ub.min(-sol.value);
        if ub - best_v <= cfg.tol {
            break;
        }
        x = sol.x;
    }
    if !best_v.is_finite() {
        return Err(Error::domain("objective is not finite anywhere the search looked"));
    }
    let mut starts = vec![best_x.clone()];
    for k in 0..cfg.restarts {
        starts.push(domain.random_point(dim, cfg.seed, k as u64));
    }
    let mut stationarity = f64::INFINITY;
    if ub - best_v > cfg.tol {
        for s in &starts {
            if let Some(p) = polish(oracle, domain, s, cfg) {
                if p.v > best_v || (s == &best_x && p.v >= best_v) {
                    if p.v > best_v {
                        best_v = p.v;
                        best_x = p.x;
                    }
                    stationarity = p.stationarity;
                }
            }
        }
    } else {
        stationarity = 0.0;
    }
    if best_v > cfg.ceiling {
        return Err(Error::Unbounded(format!("objective exceeded {}", cfg.ceiling)));
    }
    let upper_bound = ub.max(best_v);
    let converged = upper_bound - best_v <= cfg.tol || stationarity <= cfg.tol.sqrt();
    Ok(AscentResult { point: best_x, value: best_v, upper_bound, iterations, stationarity, converged })
}

/// Maximizes a concave function of `σ ∈ Δ_dim`.
pub fn max_over_simplex<F>(oracle: F, dim: usize, cfg: &AscentConfig) -> Result<AscentResult>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    maximize(&oracle, dim, Domain::Simplex, vec![1.0 / dim as f64; dim], cfg)
}

/// Maximizes a concave function of a potential. With `pin`, the search is
/// restricted to `f[pin] = 0`, which loses nothing for translation-invariant
/// objectives.
pub fn max_over_potentials<F>(oracle: F, dim: usize, pin: Option<usize>, cfg: &AscentConfig) -> Result<AscentResult>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let domain = Domain::Cube { radius: cfg.box_radius, pin };
    maximize(&oracle, dim, domain, vec![0.0; dim], cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexMax {
    pub sigma: ProbMeasure,
    pub result: AscentResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialMax {
    pub f: Potential,
    pub result: AscentResult,
}

pub fn maximize_concave_over_simplex<F>(oracle: F, space: &Arc<FiniteSpace>, cfg: &AscentConfig) -> Result<SimplexMax>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let result = max_over_simplex(oracle, space.len(), cfg)?;
    let sigma = ProbMeasure::from_unnormalized(space.clone(), result.point.clone())?;
    Ok(SimplexMax { sigma, result })
}

/// For translation-invariant objectives the returned potential vanishes at
/// the first point.
pub fn maximize_concave_over_potentials<F>(
    oracle: F,
    space: &Arc<FiniteSpace>,
    translation_invariant: bool,
    cfg: &AscentConfig,
) -> Result<PotentialMax>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let pin = translation_invariant.then_some(0);
    let result = max_over_potentials(oracle, space.len(), pin, cfg)?;
    let f = Potential::new(space.clone(), result.point.clone())?;
    Ok(PotentialMax { f, result })
}
