//! Dense convex QP solver: Mehrotra predictor-corrector interior point for
//! `min ½ zᵀPz + qᵀz + r` subject to `Gz ≤ h`.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    /// Constant term added to the reported objective.
    pub r: f64,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

impl fmt::Display for KktResiduals {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "stationarity {:.2e}, primal {:.2e}, dual {:.2e}, complementarity {:.2e}",
            self.stationarity, self.primal, self.dual, self.complementarity
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { max_iterations: 200, tolerance: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub multipliers: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub residuals: KktResiduals,
    /// The interior-point iterate was replaced by an exact active-set solution.
    pub polished: bool,
}

impl QpProblem {
    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn m(&self) -> usize {
        self.h.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.p * z)) + self.q.dot(z) + self.r
    }

    fn check(&self) -> Result<()> {
        let n = self.n();
        if self.p.nrows() != n || self.p.ncols() != n || self.g.ncols() != n || self.g.nrows() != self.m() {
            return Err(Error::Dimension(format!(
                "qp with {} variables and {} constraints has P {}x{}, G {}x{}",
                n,
                self.m(),
                self.p.nrows(),
                self.p.ncols(),
                self.g.nrows(),
                self.g.ncols()
            )));
        }
        let finite = |s: &[f64]| s.iter().all(|v| v.is_finite());
        if !finite(self.p.as_slice()) || !finite(self.q.as_slice()) || !finite(self.g.as_slice()) || !finite(self.h.as_slice()) {
            return Err(Error::NonFinite("qp data"));
        }
        Ok(())
    }

    /// Scaled KKT residuals of a primal-dual pair.
    pub fn residuals(&self, z: &DVector<f64>, lambda: &DVector<f64>) -> KktResiduals {
        let pz = &self.p * z;
        let gt_l = self.g.transpose() * lambda;
        let rd = &pz + &self.q + &gt_l;
        let scale_d = 1.0 + inf(&pz).max(inf(&self.q)).max(inf(&gt_l));
        let gz = &self.g * z;
        let viol = (&gz - &self.h).map(|v| v.max(0.0));
        let scale_p = 1.0 + inf(&self.h).max(inf(&gz));
        let slack = (&self.h - &gz).map(|v| v.max(0.0));
        let comp = slack.component_mul(lambda).map(f64::abs);
        let scale_c = 1.0 + inf(&slack).max(inf(lambda));
        KktResiduals {
            stationarity: inf(&rd) / scale_d,
            primal: inf(&viol) / scale_p,
            dual: lambda.iter().fold(0.0f64, |a, &l| a.max(-l)),
            complementarity: inf(&comp) / scale_c,
        }
    }
}

fn inf(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

fn max_step(x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
    x.iter().zip(dx.iter()).filter(|(_, d)| **d < 0.0).map(|(x, d)| -x / d).fold(1.0, f64::min)
}

/// Re-solves the equality-constrained problem on the constraints the
/// interior-point iterate identifies as active. Returns `None` unless the
/// result is primal and dual feasible with residuals within `tolerance`.
fn polish(
    qp: &QpProblem,
    z: &DVector<f64>,
    s: &DVector<f64>,
    lambda: &DVector<f64>,
    tolerance: f64,
) -> Option<(DVector<f64>, DVector<f64>, KktResiduals)> {
    let (n, m) = (qp.n(), qp.m());
    let active: Vec<usize> = (0..m).filter(|&i| lambda[i] > s[i]).collect();
    let k = active.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&qp.p);
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-&qp.q));
    for (a, &i) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(n + a, j)] = qp.g[(i, j)];
            kkt[(j, n + a)] = qp.g[(i, j)];
        }
        rhs[n + a] = qp.h[i];
    }
    let delta = 1e-11;
    let mut reg = kkt.clone();
    for j in 0..n {
        reg[(j, j)] += delta;
    }
    for a in 0..k {
        reg[(n + a, n + a)] -= delta;
    }
    let lu = reg.lu();
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..5 {
        let r = &rhs - &kkt * &sol;
        sol += lu.solve(&r)?;
    }
    let zp = sol.rows(0, n).into_owned();
    let mut lp = DVector::zeros(m);
    for (a, &i) in active.iter().enumerate() {
        lp[i] = sol[n + a];
    }
    if !zp.iter().chain(lp.iter()).all(|v| v.is_finite()) || lp.iter().any(|&l| l < -tolerance) {
        return None;
    }
    lp.iter_mut().for_each(|l| *l = l.max(0.0));
    let res = qp.residuals(&zp, &lp);
    // the iterate may be slightly infeasible, so its objective can undercut the exact optimum by the gap
    let violation = (&qp.g * z - &qp.h).map(|v| v.max(0.0));
    let gap = s.dot(lambda) + lambda.dot(&violation);
    let obj_ok = qp.objective(&zp) <= qp.objective(z) + gap + tolerance * (1.0 + qp.objective(z).abs());
    (res.max() <= tolerance && obj_ok).then_some((zp, lp, res))
}

pub fn solve_qp(qp: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    qp.check()?;
    let (n, m) = (qp.n(), qp.m());
    let gt = qp.g.transpose();

    let mut z = qp
        .p
        .clone()
        .cholesky()
        .map(|c| -c.solve(&qp.q))
        .unwrap_or_else(|| DVector::zeros(n));
    let mut s = (&qp.h - &qp.g * &z).map(|v| v.max(1.0));
    let mut lambda = DVector::from_element(m, 1.0);
    let mut best = z.clone();

    for it in 0..=settings.max_iterations {
        let residuals = qp.residuals(&z, &lambda);
        let mu = if m > 0 { s.dot(&lambda) / m as f64 } else { 0.0 };
        let r_d = &qp.p * &z + &qp.q + &gt * &lambda;
        let r_p = &qp.g * &z + &s - &qp.h;
        let gap_ok = mu <= settings.tolerance;
        if residuals.max() <= settings.tolerance && gap_ok && inf(&r_p) <= settings.tolerance * (1.0 + inf(&qp.h)) {
            if let Some((zp, lp, rp)) = polish(qp, &z, &s, &lambda, settings.tolerance) {
                return Ok(QpSolution { objective: qp.objective(&zp), z: zp, multipliers: lp, iterations: it, residuals: rp, polished: true });
            }
            return Ok(QpSolution { objective: qp.objective(&z), z, multipliers: lambda, iterations: it, residuals, polished: false });
        }
        best.copy_from(&z);
        if it == settings.max_iterations {
            break;
        }

        let d = lambda.component_div(&s);
        let mut kkt = qp.p.clone();
        for i in 0..m {
            let gi = qp.g.row(i);
            kkt += gi.transpose() * gi * d[i];
        }
        let chol = kkt
            .cholesky()
            .ok_or_else(|| Error::QpNumerical(format!("reduced KKT matrix lost definiteness at iteration {it}")))?;

        let solve_dir = |r_c: &DVector<f64>| {
            let rhs = -(&r_d + &gt * (d.component_mul(&r_p) - r_c.component_div(&s)));
            let dz = chol.solve(&rhs);
            let dl = d.component_mul(&(&qp.g * &dz + &r_p)) - r_c.component_div(&s);
            let ds = -(r_c + s.component_mul(&dl)).component_div(&lambda);
            (dz, dl, ds)
        };

        let r_c_aff = s.component_mul(&lambda);
        let (_, dl_a, ds_a) = solve_dir(&r_c_aff);
        let a_aff = max_step(&s, &ds_a).min(max_step(&lambda, &dl_a));
        let mu_aff = if m > 0 { (&s + &ds_a * a_aff).dot(&(&lambda + &dl_a * a_aff)) / m as f64 } else { 0.0 };
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3) } else { 0.0 };

        let r_c = &r_c_aff + ds_a.component_mul(&dl_a) - DVector::from_element(m, sigma * mu);
        let (dz, dl, ds) = solve_dir(&r_c);
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&lambda, &dl))).min(1.0);
        z += &dz * alpha;
        s += &ds * alpha;
        lambda += &dl * alpha;
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::QpNumerical("non-finite iterate".into()));
        }
    }
    Err(Error::QpIterationLimit {
        iterations: settings.max_iterations,
        residuals: qp.residuals(&best, &lambda),
        best: best.iter().copied().collect(),
    })
}
