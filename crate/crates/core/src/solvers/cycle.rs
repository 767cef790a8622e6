//! Minimum mean cycle (Karp) and the stationary transport LP, two
//! independent routes to the same number.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{is_forbidden, CostMatrix, Coupling};
use crate::solvers::lp::{Cmp, LpBuilder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleResult {
    /// Sum of the cycle's edge costs divided by its length.
    pub mean: f64,
    pub cycle: Vec<String>,
    pub indices: Vec<usize>,
}

pub fn min_mean_cycle(c: &CostMatrix) -> Result<CycleResult> {
    if !c.is_square() {
        return Err(Error::input("minimum mean cycle needs a square cost"));
    }
    let n = c.rows();
    let w = |u: usize, v: usize| c.get(u, v);

    // d[k][v]: cheapest walk with exactly k edges ending at v, from any start
    let inf = f64::INFINITY;
    let mut d = vec![vec![inf; n]; n + 1];
    d[0].iter_mut().for_each(|x| *x = 0.0);
    for k in 1..=n {
        for v in 0..n {
            let mut best = inf;
            for u in 0..n {
                if d[k - 1][u] < inf && !is_forbidden(w(u, v)) {
                    best = best.min(d[k - 1][u] + w(u, v));
                }
            }
            d[k][v] = best;
        }
    }
    let mut lambda = inf;
    for v in 0..n {
        if d[n][v] == inf {
            continue;
        }
        let mut worst = f64::NEG_INFINITY;
        for k in 0..n {
            if d[k][v] < inf {
                worst = worst.max((d[n][v] - d[k][v]) / (n - k) as f64);
            }
        }
        lambda = lambda.min(worst);
    }
    if lambda == inf {
        return Err(Error::input("cost graph has no finite cycle"));
    }

    // With reduced weights c − λ there is no negative cycle; every edge of a
    // minimum mean cycle is tight for the shortest-path potentials.
    let mut pot = vec![0.0; n];
    for _ in 0..n {
        for u in 0..n {
            for v in 0..n {
                if !is_forbidden(w(u, v)) {
                    let cand = pot[u] + w(u, v) - lambda;
                    if cand < pot[v] {
                        pot[v] = cand;
                    }
                }
            }
        }
    }
    let scale = c.max_finite().unwrap_or(1.0).abs().max(1.0);
    let tight = |u: usize, v: usize| !is_forbidden(w(u, v)) && (pot[u] + w(u, v) - lambda - pot[v]).abs() <= 1e-9 * scale;

    let mut best: Option<(f64, Vec<usize>)> = None;
    for start in 0..n {
        if let Some(cyc) = find_cycle(n, start, &tight) {
            let mean = cyc.iter().enumerate().map(|(i, &u)| w(u, cyc[(i + 1) % cyc.len()])).sum::<f64>() / cyc.len() as f64;
            if best.as_ref().map_or(true, |(m, _)| mean < *m) {
                best = Some((mean, cyc));
            }
        }
    }
    let (mean, indices) = best.ok_or_else(|| Error::Consistency("no tight cycle found".into()))?;
    if (mean - lambda).abs() > 1e-9 * scale {
        return Err(Error::Consistency(format!("cycle mean {mean} differs from Karp value {lambda}")));
    }
    let cycle = indices.iter().map(|&i| c.source().points()[i].clone()).collect();
    Ok(CycleResult { mean, cycle, indices })
}

/// Walk tight edges from `start`, always taking the lowest-index successor,
/// until a node repeats; returns that simple cycle.
fn find_cycle(n: usize, start: usize, tight: &impl Fn(usize, usize) -> bool) -> Option<Vec<usize>> {
    // restrict to nodes that can reach a cycle: iteratively prune sinks
    let mut alive = vec![true; n];
    loop {
        let mut changed = false;
        for u in 0..n {
            if alive[u] && !(0..n).any(|v| alive[v] && tight(u, v)) {
                alive[u] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if !alive[start] {
        return None;
    }
    let mut pos = vec![usize::MAX; n];
    let mut walk = Vec::new();
    let mut u = start;
    loop {
        if pos[u] != usize::MAX {
            return Some(walk[pos[u]..].to_vec());
        }
        pos[u] = walk.len();
        walk.push(u);
        u = (0..n).find(|&v| alive[v] && tight(u, v))?;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarySolution {
    pub value: f64,
    pub coupling: Coupling,
}

/// min ⟨c, π⟩ over π ≥ 0 with mass one and equal marginals.
pub fn solve_stationary_lp(c: &CostMatrix) -> Result<StationarySolution> {
    if !c.is_square() {
        return Err(Error::input("stationary LP needs a square cost"));
    }
    let n = c.rows();
    let mut lp = LpBuilder::new();
    let mut var = vec![None; n * n];
    for k in 0..n * n {
        let v = c.entries()[k];
        if !is_forbidden(v) {
            var[k] = Some(lp.var(v));
        }
    }
    lp.row(var.iter().flatten().map(|&v| (v, 1.0)).collect(), Cmp::Eq, 1.0);
    for x in 0..n {
        let mut coeffs = Vec::new();
        for y in 0..n {
            if let Some(v) = var[x * n + y] {
                coeffs.push((v, 1.0));
            }
            if let Some(v) = var[y * n + x] {
                coeffs.push((v, -1.0));
            }
        }
        lp.row(coeffs, Cmp::Eq, 0.0);
    }
    let sol = lp.solve()?.map_err(|s| Error::Infeasible(format!("stationary LP: {s:?} (no finite cycle?)")))?;
    let mut plan = vec![0.0; n * n];
    for k in 0..n * n {
        if let Some(v) = var[k] {
            plan[k] = sol.x[v];
        }
    }
    let total: f64 = plan.iter().sum();
    plan.iter_mut().for_each(|p| *p /= total);
    let value = c.pair(&plan);
    let coupling = Coupling::from_matrix(c.source().clone(), c.target().clone(), plan)?;
    Ok(StationarySolution { value, coupling })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::INF_COST;
    use crate::rng;
    use rand::Rng;

    /// Oracle: enumerate every simple cycle by DFS over vertex sequences.
    fn brute_min_mean(c: &CostMatrix) -> f64 {
        let n = c.rows();
        let mut best = f64::INFINITY;
        fn rec(c: &CostMatrix, path: &mut Vec<usize>, best: &mut f64) {
            let n = c.rows();
            let first = path[0];
            let last = *path.last().unwrap();
            if !is_forbidden(c.get(last, first)) {
                let s: f64 = path.windows(2).map(|w| c.get(w[0], w[1])).sum::<f64>() + c.get(last, first);
                *best = best.min(s / path.len() as f64);
            }
            for v in first + 1..n {
                if !path.contains(&v) && !is_forbidden(c.get(last, v)) {
                    path.push(v);
                    rec(c, path, best);
                    path.pop();
                }
            }
        }
        for s in 0..n {
            rec(c, &mut vec![s], &mut best);
        }
        best
    }

    #[test]
    fn examples() {
        let r = min_mean_cycle(&CostMatrix::square(vec![vec![1.0, 2.0], vec![3.0, 1.0]]).unwrap()).unwrap();
        assert_eq!(r.mean, 1.0);
        assert_eq!(r.cycle.len(), 1);
        let r = min_mean_cycle(&CostMatrix::square(vec![vec![5.0, 0.0], vec![0.0, 5.0]]).unwrap()).unwrap();
        assert_eq!(r.mean, 0.0);
        assert_eq!(r.indices, vec![0, 1]);
        let r = min_mean_cycle(&CostMatrix::square(vec![vec![2.5; 3]; 3]).unwrap()).unwrap();
        assert_eq!(r.mean, 2.5);
    }

    #[test]
    fn no_cycle() {
        let c = CostMatrix::square(vec![vec![INF_COST, 1.0], vec![INF_COST, INF_COST]]).unwrap();
        assert!(min_mean_cycle(&c).is_err());
    }

    #[test]
    fn karp_matches_enumeration_and_lp() {
        let mut r = rng::stream(3, 0);
        for _ in 0..100 {
            let n = r.gen_range(1..=6);
            let rows = (0..n)
                .map(|_| (0..n).map(|_| if r.gen::<f64>() < 0.2 { INF_COST } else { r.gen_range(-2.0..5.0) }).collect())
                .collect();
            let c = CostMatrix::square(rows).unwrap();
            let brute = brute_min_mean(&c);
            if brute == f64::INFINITY {
                assert!(min_mean_cycle(&c).is_err());
                continue;
            }
            let k = min_mean_cycle(&c).unwrap();
            assert!((k.mean - brute).abs() < 1e-12, "{} vs {brute}", k.mean);
            let s: f64 = (0..k.indices.len()).map(|i| c.get(k.indices[i], k.indices[(i + 1) % k.indices.len()])).sum();
            assert!((s / k.indices.len() as f64 - k.mean).abs() < 1e-12);
            let lp = solve_stationary_lp(&c).unwrap();
            assert!((lp.value - brute).abs() < 1e-9);
        }
    }

    #[test]
    fn stationary_examples() {
        let c = CostMatrix::square(vec![vec![0.0, 3.0], vec![1.0, 2.0]]).unwrap();
        let s = solve_stationary_lp(&c).unwrap();
        assert_eq!(s.value, 0.0);
        assert!((s.coupling.get(0, 0) - 1.0).abs() < 1e-12);
        let s = solve_stationary_lp(&CostMatrix::square(vec![vec![1.0, 2.0], vec![3.0, 1.0]]).unwrap()).unwrap();
        assert!((s.value - 1.0).abs() < 1e-12);
        let s = solve_stationary_lp(&CostMatrix::square(vec![vec![4.0; 3]; 3]).unwrap()).unwrap();
        assert!((s.value - 4.0).abs() < 1e-12);
        let rows = s.coupling.row_marginal().weights().to_vec();
        let cols = s.coupling.col_marginal().weights().to_vec();
        for (a, b) in rows.iter().zip(&cols) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
