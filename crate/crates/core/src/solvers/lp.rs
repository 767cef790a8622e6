//! Dense revised simplex for `min cᵀx, Ax = b, x ≥ 0`.
//!
//! Sized for the small programs this crate needs (tens of rows). The basis
//! inverse is kept explicitly and refreshed periodically. Columns can be
//! appended after a solve and the next solve warm-starts from the previous
//! basis, which is what the cutting-plane masters in `ascent` rely on.
//!
//! Pricing is Dantzig's rule with lowest-index tie breaking; after a run of
//! degenerate pivots it falls back to Bland's rule, so the method terminates.

use crate::error::{Error, Result};

const PIVOT_EPS: f64 = 1e-10;
const REFACTOR_EVERY: usize = 50;
const DEGENERATE_SWITCH: usize = 30;
const MAX_PIVOTS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Var {
    Art(usize),
    Col(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct StandardLp {
    m: usize,
    b: Vec<f64>,
    sign: Vec<f64>,
    cols: Vec<Vec<f64>>,
    cost: Vec<f64>,
    basis: Vec<Var>,
    binv: Vec<f64>,
    phase_one_done: bool,
    pivots: usize,
}

impl StandardLp {
    pub fn new(b: Vec<f64>) -> Self {
        let m = b.len();
        let sign: Vec<f64> = b.iter().map(|v| if *v < 0.0 { -1.0 } else { 1.0 }).collect();
        let b = b.iter().zip(&sign).map(|(v, s)| v * s).collect();
        let mut binv = vec![0.0; m * m];
        for i in 0..m {
            binv[i * m + i] = 1.0;
        }
        StandardLp {
            m,
            b,
            sign,
            cols: Vec::new(),
            cost: Vec::new(),
            basis: (0..m).map(Var::Art).collect(),
            binv,
            phase_one_done: false,
            pivots: 0,
        }
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn num_cols(&self) -> usize {
        self.cols.len()
    }

    /// Appends a column (dense, original row orientation) and returns its index.
    pub fn add_column(&mut self, cost: f64, entries: &[f64]) -> usize {
        assert_eq!(entries.len(), self.m);
        let col = entries.iter().zip(&self.sign).map(|(a, s)| a * s).collect();
        self.cols.push(col);
        self.cost.push(cost);
        self.cols.len() - 1
    }

    pub fn pivots(&self) -> usize {
        self.pivots
    }

    fn column(&self, v: Var) -> Vec<f64> {
        match v {
            Var::Art(i) => {
                let mut e = vec![0.0; self.m];
                e[i] = 1.0;
                e
            }
            Var::Col(j) => self.cols[j].clone(),
        }
    }

    fn order(&self, v: Var) -> usize {
        match v {
            Var::Art(i) => i,
            Var::Col(j) => self.m + j,
        }
    }

    /// Rebuild the basis inverse by Gauss–Jordan elimination.
    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        let mut a = vec![0.0; m * m];
        for (k, v) in self.basis.iter().enumerate() {
            let c = self.column(*v);
            for i in 0..m {
                a[i * m + k] = c[i];
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for col in 0..m {
            let p = (col..m).max_by(|&i, &j| a[i * m + col].abs().total_cmp(&a[j * m + col].abs())).unwrap();
            if a[p * m + col].abs() < 1e-13 {
                return Err(Error::Consistency("singular simplex basis".into()));
            }
            if p != col {
                for k in 0..m {
                    a.swap(p * m + k, col * m + k);
                    inv.swap(p * m + k, col * m + k);
                }
            }
            let d = a[col * m + col];
            for k in 0..m {
                a[col * m + k] /= d;
                inv[col * m + k] /= d;
            }
            for i in 0..m {
                if i != col {
                    let f = a[i * m + col];
                    if f != 0.0 {
                        for k in 0..m {
                            a[i * m + k] -= f * a[col * m + k];
                            inv[i * m + k] -= f * inv[col * m + k];
                        }
                    }
                }
            }
        }
        self.binv = inv;
        Ok(())
    }

    fn binv_times(&self, v: &[f64]) -> Vec<f64> {
        let m = self.m;
        (0..m).map(|i| (0..m).map(|k| self.binv[i * m + k] * v[k]).sum()).collect()
    }

    /// yᵀ = c_Bᵀ B⁻¹
    fn duals_for(&self, cb: &[f64]) -> Vec<f64> {
        let m = self.m;
        (0..m).map(|k| (0..m).map(|i| cb[i] * self.binv[i * m + k]).sum()).collect()
    }

    fn run(&mut self, phase_one: bool) -> Result<LpStatus> {
        let m = self.m;
        let scale = self.cost.iter().fold(1.0f64, |a, c| a.max(c.abs()));
        let opt_eps = if phase_one { 1e-11 } else { 1e-11 * scale };
        let mut degenerate_run = 0usize;
        let mut since_refactor = 0usize;
        self.refactor()?;
        loop {
            if self.pivots > MAX_PIVOTS {
                return Err(Error::NonConvergence { iterations: self.pivots, detail: "simplex pivot limit".into() });
            }
            let cost_of = |v: Var| -> f64 {
                match v {
                    Var::Art(_) => {
                        if phase_one {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Var::Col(j) => {
                        if phase_one {
                            0.0
                        } else {
                            self.cost[j]
                        }
                    }
                }
            };
            let cb: Vec<f64> = self.basis.iter().map(|v| cost_of(*v)).collect();
            let y = self.duals_for(&cb);
            let xb = self.binv_times(&self.b);

            let mut in_basis = vec![false; self.cols.len()];
            for v in &self.basis {
                if let Var::Col(j) = v {
                    in_basis[*j] = true;
                }
            }
            let bland = degenerate_run >= DEGENERATE_SWITCH;
            let mut entering: Option<(usize, f64)> = None;
            for (j, col) in self.cols.iter().enumerate() {
                if in_basis[j] {
                    continue;
                }
                let d = cost_of(Var::Col(j)) - col.iter().zip(&y).map(|(a, yi)| a * yi).sum::<f64>();
                if d < -opt_eps {
                    match entering {
                        None => entering = Some((j, d)),
                        Some((_, best)) if !bland && d < best => entering = Some((j, d)),
                        _ => {}
                    }
                    if bland {
                        break;
                    }
                }
            }
            let Some((q, _)) = entering else {
                return Ok(LpStatus::Optimal);
            };
            let w = self.binv_times(&self.cols[q]);
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                let blocking_art = !phase_one && matches!(self.basis[i], Var::Art(_)) && w[i].abs() > PIVOT_EPS;
                let ratio = if blocking_art {
                    0.0
                } else if w[i] > PIVOT_EPS {
                    xb[i].max(0.0) / w[i]
                } else {
                    continue;
                };
                match leave {
                    None => leave = Some((i, ratio)),
                    Some((r, best)) => {
                        let tie = (ratio - best).abs() <= 1e-12 * (1.0 + best.abs());
                        if (ratio < best && !tie) || (tie && self.order(self.basis[i]) < self.order(self.basis[r])) {
                            leave = Some((i, ratio));
                        }
                    }
                }
            }
            let Some((r, ratio)) = leave else {
                return Ok(LpStatus::Unbounded);
            };
            if ratio <= 1e-13 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            // rank-one update of B⁻¹
            let piv = w[r];
            for k in 0..m {
                self.binv[r * m + k] /= piv;
            }
            for i in 0..m {
                if i != r && w[i] != 0.0 {
                    let f = w[i];
                    for k in 0..m {
                        self.binv[i * m + k] -= f * self.binv[r * m + k];
                    }
                }
            }
            self.basis[r] = Var::Col(q);
            self.pivots += 1;
            since_refactor += 1;
            if since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
                since_refactor = 0;
            }
        }
    }

    /// Solve from the current basis. The first call runs phase one.
    pub fn solve(&mut self) -> Result<LpStatus> {
        if !self.phase_one_done {
            let st = self.run(true)?;
            debug_assert_eq!(st, LpStatus::Optimal);
            let xb = self.binv_times(&self.b);
            let infeas: f64 = self.basis.iter().zip(&xb).filter(|(v, _)| matches!(v, Var::Art(_))).map(|(_, x)| x.max(0.0)).sum();
            let bscale = self.b.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            if infeas > 1e-9 * bscale {
                return Ok(LpStatus::Infeasible);
            }
            self.drive_out_artificials()?;
            self.phase_one_done = true;
        }
        self.run(false)
    }

    /// After phase one, pivot zero-level artificials out of the basis where
    /// some real column can replace them; the rest sit on redundant rows.
    fn drive_out_artificials(&mut self) -> Result<()> {
        let m = self.m;
        for r in 0..m {
            if !matches!(self.basis[r], Var::Art(_)) {
                continue;
            }
            let in_basis: Vec<usize> =
                self.basis.iter().filter_map(|v| if let Var::Col(j) = v { Some(*j) } else { None }).collect();
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.cols.len() {
                if in_basis.contains(&j) {
                    continue;
                }
                let wr: f64 = (0..m).map(|k| self.binv[r * m + k] * self.cols[j][k]).sum();
                if wr.abs() > 1e-8 && best.map_or(true, |(_, b)| wr.abs() > b) {
                    best = Some((j, wr.abs()));
                }
            }
            if let Some((j, _)) = best {
                self.basis[r] = Var::Col(j);
                self.refactor()?;
            }
        }
        Ok(())
    }

    /// Primal values of the real columns.
    pub fn primal(&self) -> Vec<f64> {
        let xb = self.binv_times(&self.b);
        let mut x = vec![0.0; self.cols.len()];
        for (v, val) in self.basis.iter().zip(xb) {
            if let Var::Col(j) = v {
                x[*j] = val.max(0.0);
            }
        }
        x
    }

    /// Row multipliers in the original row orientation: at optimality
    /// `c_j − Σ_i y_i a_ij ≥ 0` for every column and `bᵀy` equals the value.
    pub fn duals(&self) -> Vec<f64> {
        let cb: Vec<f64> = self
            .basis
            .iter()
            .map(|v| match v {
                Var::Art(_) => 0.0,
                Var::Col(j) => self.cost[*j],
            })
            .collect();
        self.duals_for(&cb).iter().zip(&self.sign).map(|(y, s)| y * s).collect()
    }

    pub fn objective(&self) -> f64 {
        self.primal().iter().zip(&self.cost).map(|(x, c)| x * c).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

/// Result of [`LpBuilder::solve`].
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
    /// One multiplier per constraint row, same convention as
    /// [`StandardLp::duals`] (for a minimization: value = Σ rhs·dual).
    pub duals: Vec<f64>,
}

/// General-form LP front end (free variables, inequality rows), minimizing.
#[derive(Debug, Clone, Default)]
pub struct LpBuilder {
    obj: Vec<f64>,
    free: Vec<bool>,
    rows: Vec<(Vec<(usize, f64)>, Cmp, f64)>,
}

impl LpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn var(&mut self, cost: f64) -> usize {
        self.obj.push(cost);
        self.free.push(false);
        self.obj.len() - 1
    }

    pub fn free_var(&mut self, cost: f64) -> usize {
        self.obj.push(cost);
        self.free.push(true);
        self.obj.len() - 1
    }

    pub fn row(&mut self, coeffs: Vec<(usize, f64)>, cmp: Cmp, rhs: f64) -> usize {
        self.rows.push((coeffs, cmp, rhs));
        self.rows.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.obj.len()
    }

    pub fn solve(&self) -> Result<std::result::Result<LpSolution, LpStatus>> {
        let m = self.rows.len();
        let mut lp = StandardLp::new(self.rows.iter().map(|r| r.2).collect());
        let mut dense = vec![vec![0.0; m]; self.obj.len()];
        for (i, (coeffs, _, _)) in self.rows.iter().enumerate() {
            for &(j, a) in coeffs {
                dense[j][i] += a;
            }
        }
        let mut plus = Vec::with_capacity(self.obj.len());
        let mut minus = Vec::with_capacity(self.obj.len());
        for j in 0..self.obj.len() {
            plus.push(lp.add_column(self.obj[j], &dense[j]));
            if self.free[j] {
                let neg: Vec<f64> = dense[j].iter().map(|a| -a).collect();
                minus.push(Some(lp.add_column(-self.obj[j], &neg)));
            } else {
                minus.push(None);
            }
        }
        for (i, (_, cmp, _)) in self.rows.iter().enumerate() {
            let s = match cmp {
                Cmp::Le => 1.0,
                Cmp::Ge => -1.0,
                Cmp::Eq => continue,
            };
            let mut e = vec![0.0; m];
            e[i] = s;
            lp.add_column(0.0, &e);
        }
        match lp.solve()? {
            LpStatus::Optimal => {}
            other => return Ok(Err(other)),
        }
        let raw = lp.primal();
        let x: Vec<f64> = (0..self.obj.len()).map(|j| raw[plus[j]] - minus[j].map_or(0.0, |k| raw[k])).collect();
        let value = x.iter().zip(&self.obj).map(|(a, c)| a * c).sum();
        Ok(Ok(LpSolution { x, value, duals: lp.duals() }))
    }
}
