//! Dense two-phase tableau simplex with Bland's anti-cycling rule.
//!
//! Solves `max cᵀx` subject to `A_ub x ≤ b_ub`, `A_eq x = b_eq`, `x ≥ 0`.
//! Intended for the small problems that arise in tube tightening and
//! feasibility checks, not for large sparse programs.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearProgram {
    pub c: Vec<f64>,
    pub a_ub: Vec<Vec<f64>>,
    pub b_ub: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    width: usize,
    pivots: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.width]
    }

    fn pivot(&mut self, r: usize, col: usize) {
        let p = self.rows[r][col];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[col];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[col] = 0.0;
            }
        }
        self.basis[r] = col;
        self.pivots += 1;
    }

    /// Maximises `obj · x` over the current tableau, entering only `allowed` columns.
    fn optimize(&mut self, obj: &[f64], allowed: usize) -> Result<()> {
        let limit = 50_000;
        for _ in 0..limit {
            let entering = (0..allowed).find(|&j| {
                if self.basis.contains(&j) {
                    return false;
                }
                let reduced = obj[j]
                    - self.rows.iter().zip(&self.basis).map(|(row, &b)| obj[b] * row[j]).sum::<f64>();
                reduced > 1e-10
            });
            let Some(col) = entering else { return Ok(()) };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][col];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-12 || (ratio <= lr + 1e-12 && self.basis[i] < self.basis[li]) {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else { return Err(Error::Lp("unbounded")) };
            self.pivot(r, col);
        }
        Err(Error::Lp("cycling past the pivot limit"))
    }
}

impl LinearProgram {
    pub fn maximize(c: Vec<f64>) -> Self {
        Self { c, ..Default::default() }
    }

    pub fn le(mut self, row: Vec<f64>, b: f64) -> Self {
        self.a_ub.push(row);
        self.b_ub.push(b);
        self
    }

    pub fn eq(mut self, row: Vec<f64>, b: f64) -> Self {
        self.a_eq.push(row);
        self.b_eq.push(b);
        self
    }

    pub fn solve(&self) -> Result<LpSolution> {
        let n = self.c.len();
        if self.a_ub.len() != self.b_ub.len()
            || self.a_eq.len() != self.b_eq.len()
            || self.a_ub.iter().chain(&self.a_eq).any(|r| r.len() != n)
        {
            return Err(Error::Dimension("linear program rows do not match the objective length".into()));
        }
        let m_ub = self.a_ub.len();
        let m = m_ub + self.a_eq.len();
        let needs_art: Vec<bool> = (0..m).map(|i| if i < m_ub { self.b_ub[i] < 0.0 } else { true }).collect();
        let n_art = needs_art.iter().filter(|&&a| a).count();
        let width = n + m_ub + n_art;

        let mut rows = Vec::with_capacity(m);
        let mut basis = Vec::with_capacity(m);
        let mut art = n + m_ub;
        for i in 0..m {
            let mut row = vec![0.0; width + 1];
            let (coefs, b) = if i < m_ub { (&self.a_ub[i], self.b_ub[i]) } else { (&self.a_eq[i - m_ub], self.b_eq[i - m_ub]) };
            let sign = if b < 0.0 { -1.0 } else { 1.0 };
            for (j, v) in coefs.iter().enumerate() {
                row[j] = sign * v;
            }
            if i < m_ub {
                row[n + i] = sign;
            }
            row[width] = sign * b;
            if needs_art[i] {
                row[art] = 1.0;
                basis.push(art);
                art += 1;
            } else {
                basis.push(n + i);
            }
            rows.push(row);
        }
        let mut t = Tableau { rows, basis, width, pivots: 0 };

        if n_art > 0 {
            let mut phase1 = vec![0.0; width];
            for v in &mut phase1[n + m_ub..] {
                *v = -1.0;
            }
            t.optimize(&phase1, width)?;
            let infeas: f64 = (0..m).filter(|&i| t.basis[i] >= n + m_ub).map(|i| t.rhs(i)).sum();
            if infeas > FEAS_TOL * (1.0 + self.b_ub.iter().chain(&self.b_eq).fold(0.0f64, |a, b| a.max(b.abs()))) {
                return Err(Error::Lp("infeasible"));
            }
            for i in 0..m {
                if t.basis[i] >= n + m_ub {
                    if let Some(col) = (0..n + m_ub).find(|&j| t.rows[i][j].abs() > 1e-9) {
                        t.pivot(i, col);
                    }
                }
            }
        }

        let mut obj = vec![0.0; width];
        obj[..n].copy_from_slice(&self.c);
        t.optimize(&obj, n + m_ub)?;

        let mut x = vec![0.0; n];
        for (i, &b) in t.basis.iter().enumerate() {
            if b < n {
                x[b] = t.rhs(i);
            }
        }
        let objective = self.c.iter().zip(&x).map(|(c, x)| c * x).sum();
        Ok(LpSolution { x, objective, pivots: t.pivots })
    }
}

/// `max cᵀw` over the box `|w_j| ≤ half_width_j`, solved as an LP.
pub fn box_support_lp(c: &[f64], half_width: &[f64]) -> Result<f64> {
    // w = v − w̄ with 0 ≤ v ≤ 2 w̄
    let n = c.len();
    let mut lp = LinearProgram::maximize(c.to_vec());
    for j in 0..n {
        let mut row = vec![0.0; n];
        row[j] = 1.0;
        lp = lp.le(row, 2.0 * half_width[j]);
    }
    let sol = lp.solve()?;
    let offset: f64 = c.iter().zip(half_width).map(|(c, w)| c * w).sum();
    Ok(sol.objective - offset)
}
