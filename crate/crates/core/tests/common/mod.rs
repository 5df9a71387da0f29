#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rmpc_core::ltv::{Mat5, Vec5};
use rmpc_core::sim::ScenarioConfig;
use rmpc_core::{DisturbanceSet, QpProblem};

pub const SCENARIOS: [&str; 4] = ["scenario1", "scenario2", "scenario3", "scenario4"];

pub fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn scenario(name: &str) -> ScenarioConfig {
    let path = scenario_dir().join(format!("{name}.toml"));
    ScenarioConfig::load(&path).unwrap_or_else(|e| panic!("loading {}: {e}", path.display()))
}

/// Hildreth's dual coordinate ascent. Slow but simple: every sweep updates
/// one multiplier at a time in closed form and keeps the primal point
/// `z = −P⁻¹(q + Gᵀλ)` in sync.
pub fn hildreth(qp: &QpProblem, max_sweeps: usize) -> (DVector<f64>, f64) {
    let n = qp.q.len();
    let m = qp.h.len();
    let chol = qp.p.clone().cholesky().expect("oracle needs a positive definite P");
    let p_inv = chol.inverse();
    let v: Vec<DVector<f64>> = (0..m).map(|i| &p_inv * qp.g.row(i).transpose()).collect();
    let diag: Vec<f64> = (0..m).map(|i| qp.g.row(i).dot(&v[i].transpose())).collect();
    let mut lambda = vec![0.0; m];
    let mut z = -(&p_inv * &qp.q);
    for _ in 0..max_sweeps {
        let mut largest = 0.0f64;
        for i in 0..m {
            if diag[i] <= 0.0 {
                continue;
            }
            let gap = (qp.g.row(i) * &z)[0] - qp.h[i];
            let next = (lambda[i] + gap / diag[i]).max(0.0);
            let step = next - lambda[i];
            if step != 0.0 {
                z.axpy(-step, &v[i], 1.0);
                lambda[i] = next;
                largest = largest.max(step.abs() * diag[i].sqrt());
            }
        }
        if largest < 1e-13 {
            break;
        }
    }
    debug_assert_eq!(z.len(), n);
    let obj = qp.objective(&z);
    (z, obj)
}

/// Largest `cᵀw` over the box by enumerating all 32 vertices.
pub fn vertex_support(c: &[f64; 5], half_widths: &[f64; 5]) -> f64 {
    (0..32u32)
        .map(|mask| {
            (0..5)
                .map(|j| {
                    let sign = if mask & (1 << j) != 0 { 1.0 } else { -1.0 };
                    c[j] * sign * half_widths[j]
                })
                .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Worst-case `row · e_i` for `e_{k+1} = Φ_k e_k + w_k`, `e_0 = 0`, `w_k ∈ W`.
pub fn brute_force_margin(phis: &[Mat5], w: &DisturbanceSet, i: usize, row: &[f64; 5]) -> f64 {
    let r = nalgebra::RowVector5::from_row_slice(row);
    let mut total = 0.0;
    for k in 0..i {
        let mut prod = Mat5::identity();
        for phi in phis.iter().take(i).skip(k + 1) {
            prod = phi * prod;
        }
        let c = r * prod;
        let c = [c[0], c[1], c[2], c[3], c[4]];
        total += vertex_support(&c, &w.half_widths);
    }
    total
}

/// Fixed-step RK4 of `ẋ = A x + B u + L` over `dt`.
pub fn rk4_affine(a: &Mat5, b: &Vec5, l: &Vec5, x0: &Vec5, u: f64, dt: f64, steps: usize) -> Vec5 {
    let f = |x: &Vec5| a * x + b * u + l;
    let h = dt / steps as f64;
    let mut x = *x0;
    for _ in 0..steps {
        let k1 = f(&x);
        let k2 = f(&(x + k1 * (h / 2.0)));
        let k3 = f(&(x + k2 * (h / 2.0)));
        let k4 = f(&(x + k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    x
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Random strictly convex QP that is feasible at the origin.
pub fn random_qp(rng: &mut impl rand::Rng, n: usize, m: usize) -> QpProblem {
    let mut u = || -> f64 { rng.gen_range(-1.0..1.0) };
    let root = DMatrix::from_fn(n, n, |_, _| u());
    let p = root.transpose() * &root + DMatrix::identity(n, n) * 0.5;
    let q = DVector::from_fn(n, |_, _| 3.0 * u());
    let g = DMatrix::from_fn(m, n, |_, _| u());
    let h = DVector::from_fn(m, |_, _| 0.1 + u().abs());
    QpProblem { p, q, r: 0.0, g, h }
}

/// Reports of the first `steps` controller steps of a scenario.
pub fn step_reports(cfg: &ScenarioConfig, steps: usize) -> Vec<rmpc_core::StepReport> {
    let mut cfg = cfg.clone();
    cfg.duration = steps as f64 * cfg.grid.t_short;
    let mut out = Vec::new();
    rmpc_core::sim::run_scenario_with(&cfg, &rmpc_core::sim::RunOptions::default(), |rec| out.push(rec.report.clone()))
        .expect("scenario runs");
    out
}

/// Whether some `c` with every slack at zero satisfies all rows, decided by
/// a phase-one LP over `v = c + 1 ≥ 0`.
pub fn zero_slack_feasible(qp: &QpProblem, n_c: usize) -> bool {
    let mut lp = rmpc_core::lp::LinearProgram::maximize(vec![0.0; n_c]);
    for i in 0..qp.h.len() {
        let row: Vec<f64> = (0..n_c).map(|k| qp.g[(i, k)]).collect();
        let shift: f64 = row.iter().sum();
        if row.iter().all(|v| *v == 0.0) {
            if qp.h[i] < 0.0 {
                return false;
            }
            continue;
        }
        lp = lp.le(row, qp.h[i] + shift);
    }
    lp.solve().is_ok()
}
