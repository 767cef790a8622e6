//! Multi-cut Kelley master problem.
//!
//! Minimizes `Σ_r F_r(x)` over a polytope `{x : E x = e, G x ≤ h}` where
//! each convex `F_r` is known only through cuts `F_r(x) ≥ a + sᵀx`. The
//! master LP is solved in its dual form: one column per cut, a fixed number
//! of rows (`R + dim`), so adding a cut is a column append and the simplex
//! warm-starts from the previous basis. The optimal master value is a
//! certified lower bound on the true minimum.

use crate::error::{Error, Result};
use crate::solvers::lp::{LpStatus, StandardLp};

#[derive(Debug, Clone)]
pub struct CuttingPlaneMaster {
    lp: StandardLp,
    parts: usize,
    dim: usize,
    cuts: usize,
}

/// Polytope in `E x = e, G x ≤ h` form, rows stored densely.
#[derive(Debug, Clone)]
pub struct Polytope {
    pub dim: usize,
    pub eq: Vec<(Vec<f64>, f64)>,
    pub le: Vec<(Vec<f64>, f64)>,
}

impl Polytope {
    pub fn simplex(dim: usize) -> Self {
        let le = (0..dim)
            .map(|i| {
                let mut g = vec![0.0; dim];
                g[i] = -1.0;
                (g, 0.0)
            })
            .collect();
        Polytope { dim, eq: vec![(vec![1.0; dim], 1.0)], le }
    }

    /// `|x_i| ≤ radius`, optionally with `x_pin = 0`.
    pub fn cube(dim: usize, radius: f64, pin: Option<usize>) -> Self {
        let mut le = Vec::with_capacity(2 * dim);
        for i in 0..dim {
            let mut g = vec![0.0; dim];
            g[i] = 1.0;
            le.push((g.clone(), radius));
            g[i] = -1.0;
            le.push((g, radius));
        }
        let eq = pin
            .map(|p| {
                let mut e = vec![0.0; dim];
                e[p] = 1.0;
                vec![(e, 0.0)]
            })
            .unwrap_or_default();
        Polytope { dim, eq, le }
    }
}

#[derive(Debug, Clone)]
pub struct MasterSolution {
    /// Lower bound on `min Σ F_r`.
    pub value: f64,
    pub x: Vec<f64>,
    /// Model value of each part at `x`.
    pub z: Vec<f64>,
}

impl CuttingPlaneMaster {
    pub fn new(parts: usize, domain: &Polytope) -> Self {
        let dim = domain.dim;
        let mut b = vec![1.0; parts];
        b.extend(std::iter::repeat(0.0).take(dim));
        let mut lp = StandardLp::new(b);
        let rows = parts + dim;
        for (e_row, e_rhs) in &domain.eq {
            let mut col = vec![0.0; rows];
            col[parts..].copy_from_slice(e_row);
            lp.add_column(-e_rhs, &col);
            let neg: Vec<f64> = col.iter().map(|v| -v).collect();
            lp.add_column(*e_rhs, &neg);
        }
        for (g_row, h) in &domain.le {
            let mut col = vec![0.0; rows];
            for (c, g) in col[parts..].iter_mut().zip(g_row) {
                *c = -g;
            }
            lp.add_column(*h, &col);
        }
        CuttingPlaneMaster { lp, parts, dim, cuts: 0 }
    }

    /// Adds `F_part(x) ≥ intercept + slopeᵀ x`.
    pub fn add_cut(&mut self, part: usize, intercept: f64, slope: &[f64]) {
        assert_eq!(slope.len(), self.dim);
        let mut col = vec![0.0; self.parts + self.dim];
        col[part] = 1.0;
        for (c, s) in col[self.parts..].iter_mut().zip(slope) {
            *c = -s;
        }
        self.lp.add_column(-intercept, &col);
        self.cuts += 1;
    }

    /// Cut through `(x0, f0)` with subgradient `s`.
    pub fn add_cut_at(&mut self, part: usize, x0: &[f64], f0: f64, s: &[f64]) {
        let intercept = f0 - s.iter().zip(x0).map(|(a, b)| a * b).sum::<f64>();
        self.add_cut(part, intercept, s);
    }

    pub fn cuts(&self) -> usize {
        self.cuts
    }

    pub fn solve(&mut self) -> Result<MasterSolution> {
        match self.lp.solve()? {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => {
                return Err(Error::Consistency("cutting-plane master infeasible (empty domain or a part without cuts)".into()))
            }
            LpStatus::Unbounded => return Err(Error::Consistency("cutting-plane master dual unbounded".into())),
        }
        let y = self.lp.duals();
        let z: Vec<f64> = y[..self.parts].iter().map(|v| -v).collect();
        let x: Vec<f64> = y[self.parts..].iter().map(|v| -v).collect();
        Ok(MasterSolution { value: -self.lp.objective(), x, z })
    }
}
