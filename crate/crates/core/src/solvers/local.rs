//! Derivative-free local search for the nonconvex (difference-of-convex)
//! problems of the inequality checks, and dense simplex grids.
//!
//! The pattern search polls a fixed direction set (coordinate axes and the
//! pairwise sums and differences), doubles the step after a successful poll
//! and halves it after a failed one. The pairwise directions follow the
//! kinks of c-transforms, which lie along xᵢ − xⱼ = const.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatternConfig {
    pub initial_step: f64,
    pub min_step: f64,
    pub max_evals: usize,
    /// Euclidean searches stay inside [−radius, radius]ⁿ.
    pub radius: f64,
}

impl Default for PatternConfig {
    fn default() -> Self {
        PatternConfig { initial_step: 0.5, min_step: 1e-11, max_evals: 20_000, radius: 60.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalMin {
    pub point: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

fn directions(n: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        out.push(e.clone());
        e[i] = -1.0;
        out.push(e);
    }
    let r = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..n {
        for j in (i + 1)..n {
            for (a, b) in [(r, r), (r, -r), (-r, r), (-r, -r)] {
                let mut e = vec![0.0; n];
                e[i] = a;
                e[j] = b;
                out.push(e);
            }
        }
    }
    out
}

/// Minimizes `f` over the cube from `x0`. Non-finite values count as +∞.
pub fn pattern_minimize<F>(f: F, x0: Vec<f64>, cfg: &PatternConfig) -> LocalMin
where
    F: Fn(&[f64]) -> f64,
{
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let dirs = directions(x0.len());
    let mut x: Vec<f64> = x0.iter().map(|v| v.clamp(-cfg.radius, cfg.radius)).collect();
    let mut fx = eval(&x);
    let mut evals = 1;
    let mut step = cfg.initial_step;
    let mut trial = x.clone();
    while step >= cfg.min_step && evals < cfg.max_evals {
        let mut moved = false;
        for d in &dirs {
            for ((t, xi), di) in trial.iter_mut().zip(&x).zip(d) {
                *t = (xi + step * di).clamp(-cfg.radius, cfg.radius);
            }
            let ft = eval(&trial);
            evals += 1;
            if ft < fx {
                fx = ft;
                x.copy_from_slice(&trial);
                moved = true;
                break;
            }
        }
        step = if moved { (2.0 * step).min(cfg.radius) } else { 0.5 * step };
    }
    LocalMin { point: x, value: fx, evals }
}

/// Minimizes `f` over a product of simplices, `blocks` giving the block
/// sizes of the concatenated point. Moves shift mass between two
/// coordinates of one block.
pub fn simplex_pattern_minimize<F>(f: F, x0: Vec<f64>, blocks: &[usize], cfg: &PatternConfig) -> LocalMin
where
    F: Fn(&[f64]) -> f64,
{
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut pairs = Vec::new();
    let mut start = 0;
    for &b in blocks {
        for i in start..start + b {
            for j in start..start + b {
                if i != j {
                    pairs.push((i, j));
                }
            }
        }
        start += b;
    }
    let mut x = x0;
    let mut fx = eval(&x);
    let mut evals = 1;
    let mut step = cfg.initial_step;
    let mut trial = x.clone();
    while step >= cfg.min_step && evals < cfg.max_evals {
        let mut moved = false;
        for &(i, j) in &pairs {
            let d = step.min(x[i]);
            if d <= 0.0 {
                continue;
            }
            trial.copy_from_slice(&x);
            trial[i] -= d;
            trial[j] += d;
            let ft = eval(&trial);
            evals += 1;
            if ft < fx {
                fx = ft;
                x.copy_from_slice(&trial);
                moved = true;
                break;
            }
        }
        step = if moved { (2.0 * step).min(1.0) } else { 0.5 * step };
    }
    LocalMin { point: x, value: fx, evals }
}

/// Number of points of the simplex grid with spacing 1/m in n coordinates.
pub fn simplex_grid_size(n: usize, m: usize) -> usize {
    // C(m + n − 1, n − 1), saturating
    let k = n.saturating_sub(1);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (m + k - i) as u128 / (i + 1) as u128;
        if c > usize::MAX as u128 {
            return usize::MAX;
        }
    }
    c as usize
}

/// All points of the n-simplex whose coordinates are multiples of 1/m, in
/// lexicographic order.
pub fn simplex_grid(n: usize, m: usize, cap: usize) -> Result<Vec<Vec<f64>>> {
    if n == 0 || m == 0 {
        return Err(Error::input("simplex grid needs n >= 1 and m >= 1"));
    }
    let size = simplex_grid_size(n, m);
    if size > cap {
        return Err(Error::domain(format!("simplex grid with {size} points exceeds the cap {cap}")));
    }
    let mut out = Vec::with_capacity(size);
    let mut counts = vec![0usize; n];
    fn rec(k: usize, left: usize, m: usize, counts: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        let n = counts.len();
        if k == n - 1 {
            counts[k] = left;
            out.push(counts.iter().map(|&c| c as f64 / m as f64).collect());
            return;
        }
        for c in 0..=left {
            counts[k] = c;
            rec(k + 1, left - c, m, counts, out);
        }
    }
    rec(0, m, m, &mut counts, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes() {
        assert_eq!(simplex_grid_size(2, 256), 257);
        assert_eq!(simplex_grid_size(3, 64), 2145);
        let g = simplex_grid(3, 4, 100).unwrap();
        assert_eq!(g.len(), 15);
        assert!(g.iter().all(|p| (p.iter().sum::<f64>() - 1.0).abs() < 1e-15));
        assert!(simplex_grid(4, 100, 1000).is_err());
    }

    #[test]
    fn pattern_search_handles_kinks() {
        // |x − y − 1| + 0.1 (x + y)² has its minimum along a kink
        let f = |x: &[f64]| (x[0] - x[1] - 1.0).abs() + 0.1 * (x[0] + x[1]).powi(2);
        let r = pattern_minimize(f, vec![3.0, -4.0], &PatternConfig::default());
        assert!(r.value < 1e-9, "{r:?}");
        let smooth = |x: &[f64]| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2) + x[0] * x[1];
        let r = pattern_minimize(smooth, vec![0.0, 0.0], &PatternConfig::default());
        // stationary point of the quadratic
        let (a, b) = (24.0 / 11.0, -26.0 / 11.0);
        assert!((r.point[0] - a).abs() < 1e-5 && (r.point[1] - b).abs() < 1e-5, "{r:?}");
    }

    #[test]
    fn simplex_search_reaches_faces() {
        let f = |x: &[f64]| x[0] - 2.0 * x[2] + (x[3] - 0.25).powi(2);
        let r = simplex_pattern_minimize(f, vec![0.3, 0.3, 0.4, 0.5, 0.5], &[3, 2], &PatternConfig::default());
        assert!((r.point[2] - 1.0).abs() < 1e-9 && (r.point[3] - 0.25).abs() < 1e-6, "{r:?}");
    }
}
