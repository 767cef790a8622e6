//! Exact transport LP: transportation (network) simplex on the bipartite
//! graph, with Bland's rule for both entering and leaving cells. Forbidden
//! cells (`+∞` sentinel) route through the general LP instead, since the
//! network method would need them in its starting tree.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{check_space, is_forbidden, CostMatrix, Coupling, Potential, ProbMeasure};
use crate::solvers::lp::{Cmp, LpBuilder, LpStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub value: f64,
    pub coupling: Coupling,
    /// (φ on X, ψ on Y) with ψ(y) − φ(x) ≤ c(x, y) and
    /// value = ⟨ψ, ν⟩ − ⟨φ, μ⟩.
    pub dual_potentials: (Potential, Potential),
}

/// Plan, φ, ψ and value without the wrapper types.
#[derive(Debug, Clone)]
pub struct RawTransport {
    pub plan: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub value: f64,
}

pub fn solve_transport_lp(c: &CostMatrix, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<LpSolution> {
    check_space(c.source(), mu.space())?;
    check_space(c.target(), nu.space())?;
    let raw = transport_raw(c.entries(), mu.weights(), nu.weights())?;
    let coupling = Coupling::new(mu, nu, raw.plan)?;
    Ok(LpSolution {
        value: raw.value,
        coupling,
        dual_potentials: (Potential::new(mu.space().clone(), raw.phi)?, Potential::new(nu.space().clone(), raw.psi)?),
    })
}

/// Solves on raw row-major costs. φ is normalized to vanish at the first
/// point where `a` is positive.
pub fn transport_raw(c: &[f64], a: &[f64], b: &[f64]) -> Result<RawTransport> {
    let (n, m) = (a.len(), b.len());
    assert_eq!(c.len(), n * m);
    let mut out = if c.iter().any(|v| is_forbidden(*v)) { general_lp(c, a, b)? } else { network_simplex(c, a, b)? };
    if let Some(x0) = a.iter().position(|w| *w > 0.0) {
        let k = out.phi[x0];
        out.phi.iter_mut().for_each(|p| *p -= k);
        out.psi.iter_mut().for_each(|p| *p -= k);
    }
    Ok(out)
}

fn network_simplex(c: &[f64], a: &[f64], b: &[f64]) -> Result<RawTransport> {
    let (n, m) = (a.len(), b.len());
    let mut flow = vec![0.0; n * m];
    let mut basic = vec![false; n * m];

    // north-west corner start, always n + m − 1 basic cells
    let (mut ra, mut rb) = (a.to_vec(), b.to_vec());
    let (mut i, mut j) = (0, 0);
    loop {
        let x = ra[i].min(rb[j]).max(0.0);
        flow[i * m + j] = x;
        basic[i * m + j] = true;
        ra[i] -= x;
        rb[j] -= x;
        if i == n - 1 && j == m - 1 {
            break;
        }
        if i == n - 1 {
            j += 1;
        } else if j == m - 1 || ra[i] <= rb[j] {
            i += 1;
        } else {
            j += 1;
        }
    }

    let scale = c.iter().fold(1.0f64, |s, v| s.max(v.abs()));
    let eps = 1e-12 * scale;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; m];
    let max_pivots = 50 * (n * m + 10) * (n + m);
    for _ in 0..max_pivots {
        potentials(c, &basic, n, m, &mut u, &mut v);
        let entering = (0..n * m).find(|&k| !basic[k] && c[k] - u[k / m] - v[k % m] < -eps);
        let Some(e) = entering else {
            let value = (0..n * m).filter(|&k| flow[k] > 0.0).map(|k| c[k] * flow[k]).sum();
            let phi = u.iter().map(|x| -x).collect();
            return Ok(RawTransport { plan: flow, phi, psi: v, value });
        };
        let cycle = tree_path(&basic, n, m, e);
        // cycle[0] is the entering cell (+), signs alternate afterwards
        let theta = cycle.iter().skip(1).step_by(2).map(|&k| flow[k]).fold(f64::INFINITY, f64::min);
        let leaving =
            cycle.iter().skip(1).step_by(2).copied().filter(|&k| flow[k] <= theta + 1e-15).min().expect("cycle has a minus cell");
        for (t, &k) in cycle.iter().enumerate() {
            if t % 2 == 0 {
                flow[k] += theta;
            } else {
                flow[k] = (flow[k] - theta).max(0.0);
            }
        }
        flow[leaving] = 0.0;
        basic[leaving] = false;
        basic[e] = true;
    }
    Err(Error::NonConvergence { iterations: max_pivots, detail: "transport simplex".into() })
}

/// u_i + v_j = c_ij on the basic tree, u_0 = 0.
fn potentials(c: &[f64], basic: &[bool], n: usize, m: usize, u: &mut [f64], v: &mut [f64]) {
    let mut seen_r = vec![false; n];
    let mut seen_c = vec![false; m];
    seen_r[0] = true;
    u[0] = 0.0;
    let mut stack = vec![(true, 0usize)];
    while let Some((is_row, idx)) = stack.pop() {
        if is_row {
            for j in 0..m {
                if basic[idx * m + j] && !seen_c[j] {
                    seen_c[j] = true;
                    v[j] = c[idx * m + j] - u[idx];
                    stack.push((false, j));
                }
            }
        } else {
            for i in 0..n {
                if basic[i * m + idx] && !seen_r[i] {
                    seen_r[i] = true;
                    u[i] = c[i * m + idx] - v[idx];
                    stack.push((true, i));
                }
            }
        }
    }
}

/// Cells of the cycle closed by the entering cell `e = (i, j)`: the tree
/// path from column j back to row i, prefixed by `e`.
fn tree_path(basic: &[bool], n: usize, m: usize, e: usize) -> Vec<usize> {
    let (ei, ej) = (e / m, e % m);
    // nodes: rows 0..n, columns n..n+m
    let mut parent = vec![usize::MAX; n + m];
    let mut parent_cell = vec![usize::MAX; n + m];
    let start = n + ej;
    parent[start] = start;
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(node) = queue.pop_front() {
        if node == ei {
            break;
        }
        if node >= n {
            let j = node - n;
            for i in 0..n {
                if basic[i * m + j] && parent[i] == usize::MAX {
                    parent[i] = node;
                    parent_cell[i] = i * m + j;
                    queue.push_back(i);
                }
            }
        } else {
            for j in 0..m {
                if basic[node * m + j] && parent[n + j] == usize::MAX {
                    parent[n + j] = node;
                    parent_cell[n + j] = node * m + j;
                    queue.push_back(n + j);
                }
            }
        }
    }
    let mut path = Vec::new();
    let mut node = ei;
    while node != start {
        path.push(parent_cell[node]);
        node = parent[node];
    }
    path.reverse();
    let mut cycle = vec![e];
    cycle.extend(path);
    cycle
}

fn general_lp(c: &[f64], a: &[f64], b: &[f64]) -> Result<RawTransport> {
    let (n, m) = (a.len(), b.len());
    let mut lp = LpBuilder::new();
    let mut var = vec![None; n * m];
    for k in 0..n * m {
        if !is_forbidden(c[k]) {
            var[k] = Some(lp.var(c[k]));
        }
    }
    for x in 0..n {
        let coeffs = (0..m).filter_map(|y| var[x * m + y].map(|v| (v, 1.0))).collect();
        lp.row(coeffs, Cmp::Eq, a[x]);
    }
    for y in 0..m {
        let coeffs = (0..n).filter_map(|x| var[x * m + y].map(|v| (v, 1.0))).collect();
        lp.row(coeffs, Cmp::Eq, b[y]);
    }
    match lp.solve()? {
        Ok(sol) => {
            let mut plan = vec![0.0; n * m];
            for k in 0..n * m {
                if let Some(v) = var[k] {
                    plan[k] = sol.x[v];
                }
            }
            let phi = sol.duals[..n].iter().map(|y| -y).collect();
            let psi = sol.duals[n..].to_vec();
            let value = (0..n * m).filter(|&k| plan[k] > 0.0).map(|k| c[k] * plan[k]).sum();
            Ok(RawTransport { plan, phi, psi, value })
        }
        Err(LpStatus::Infeasible) => Err(Error::Infeasible("forbidden cells block every transport plan".into())),
        Err(s) => Err(Error::Consistency(format!("transport LP returned {s:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{FiniteSpace, INF_COST};
    use crate::rng;
    use rand::Rng;
    use std::sync::Arc;

    fn check_certificate(c: &[f64], a: &[f64], b: &[f64], t: &RawTransport) {
        let m = b.len();
        let dual: f64 =
            t.psi.iter().zip(b).map(|(p, w)| p * w).sum::<f64>() - t.phi.iter().zip(a).map(|(p, w)| p * w).sum::<f64>();
        assert!((dual - t.value).abs() <= 1e-9, "gap {}", dual - t.value);
        for k in 0..c.len() {
            if is_forbidden(c[k]) {
                continue;
            }
            let slack = c[k] - t.psi[k % m] + t.phi[k / m];
            assert!(slack >= -1e-9, "dual infeasible at {k}: {slack}");
            if t.plan[k] > 1e-10 {
                assert!(slack.abs() <= 1e-8);
            }
        }
    }

    /// Brute force: every choice of n + m − 1 cells whose equality system
    /// has a unique nonnegative solution is a vertex of the polytope.
    fn vertex_enumeration(c: &[f64], a: &[f64], b: &[f64]) -> f64 {
        let (n, m) = (a.len(), b.len());
        let k = n + m - 1;
        let mut best = f64::INFINITY;
        let cells = n * m;
        for mask in 0u32..(1 << cells) {
            if mask.count_ones() as usize != k {
                continue;
            }
            let chosen: Vec<usize> = (0..cells).filter(|i| mask & (1 << i) != 0).collect();
            // rows: n row sums + first m−1 column sums
            let mut mat = nalgebra::DMatrix::<f64>::zeros(k, k);
            let mut rhs = nalgebra::DVector::<f64>::zeros(k);
            for (col, &cell) in chosen.iter().enumerate() {
                mat[(cell / m, col)] = 1.0;
                if cell % m < m - 1 {
                    mat[(n + cell % m, col)] = 1.0;
                }
            }
            for x in 0..n {
                rhs[x] = a[x];
            }
            for y in 0..m - 1 {
                rhs[n + y] = b[y];
            }
            let Some(sol) = mat.clone().lu().solve(&rhs) else { continue };
            if (&mat * &sol - &rhs).norm() > 1e-9 || sol.iter().any(|v| *v < -1e-12) {
                continue;
            }
            let v: f64 = chosen.iter().zip(sol.iter()).map(|(cell, p)| c[*cell] * p).sum();
            best = best.min(v);
        }
        best
    }

    #[test]
    fn unique_plan() {
        let t = transport_raw(&[0.0, 1.0, 1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(t.value, 1.0);
        assert_eq!(t.plan, vec![0.0, 1.0, 0.0, 0.0]);
        check_certificate(&[0.0, 1.0, 1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &t);
    }

    #[test]
    fn dirac_to_dirac() {
        let c = [3.0, 1.0, 4.0, 1.5, 9.0, 2.0, 6.0, 5.0, 3.5];
        let t = transport_raw(&c, &[0.0, 1.0, 0.0], &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(t.value, c[4]);
    }

    #[test]
    fn matches_vertex_enumeration() {
        let mut r = rng::stream(7, 0);
        for _ in 0..30 {
            let c: Vec<f64> = (0..9).map(|_| r.gen_range(0..10) as f64).collect();
            let (a, b) = ([0.5, 0.3, 0.2], [0.2, 0.3, 0.5]);
            let t = transport_raw(&c, &a, &b).unwrap();
            let brute = vertex_enumeration(&c, &a, &b);
            assert!((t.value - brute).abs() < 1e-12, "{} vs {brute}", t.value);
            check_certificate(&c, &a, &b, &t);
        }
    }

    #[test]
    fn random_certificates() {
        let mut r = rng::stream(11, 0);
        for _ in 0..200 {
            let n = r.gen_range(2..=8);
            let m = r.gen_range(2..=8);
            let c = rng::uniform_vec(&mut r, n * m, 0.0, 5.0);
            let a = rng::sparse_simplex_point(&mut r, n, 0.3);
            let b = rng::sparse_simplex_point(&mut r, m, 0.3);
            let t = transport_raw(&c, &a, &b).unwrap();
            check_certificate(&c, &a, &b, &t);
        }
    }

    #[test]
    fn forbidden_cells() {
        let c = [INF_COST, 1.0, 2.0, INF_COST];
        let t = transport_raw(&c, &[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert!((t.value - 1.5).abs() < 1e-12);
        check_certificate(&c, &[0.5, 0.5], &[0.5, 0.5], &t);
        let err = transport_raw(&c, &[1.0, 0.0], &[1.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn wrapper_checks_spaces() {
        let s = Arc::new(FiniteSpace::indexed("X", 2).unwrap());
        let other = Arc::new(FiniteSpace::indexed("Y", 3).unwrap());
        let c = CostMatrix::from_rows(s.clone(), s.clone(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let mu = ProbMeasure::uniform(s.clone());
        let sol = solve_transport_lp(&c, &mu, &ProbMeasure::dirac_at(s, 0)).unwrap();
        assert!((sol.value - 0.5).abs() < 1e-15);
        assert_eq!(sol.dual_potentials.0.values()[0], 0.0);
        assert!(solve_transport_lp(&c, &mu, &ProbMeasure::uniform(other)).is_err());
    }
}
