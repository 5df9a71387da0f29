//! Ancillary LQR gains for the tube controller.

use nalgebra::{Matrix4, SMatrix, Vector4};

use crate::error::{Error, Result};
use crate::ltv::{Mat5, StepModel, TimeGrid, STAB_DIM};

pub type Gain = SMatrix<f64, 1, STAB_DIM>;

const DARE_TOL: f64 = 1e-10;
const DARE_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct DareSolution {
    pub p: Matrix4<f64>,
    pub k: Gain,
    pub iterations: usize,
}

/// Steady-state discrete Riccati solution by fixed-point iteration of the
/// backward recursion, started from `p0` (or `Q`).
pub fn solve_dare(
    a: &Matrix4<f64>,
    b: &Vector4<f64>,
    q: &Matrix4<f64>,
    r: f64,
    p0: Option<&Matrix4<f64>>,
) -> Result<DareSolution> {
    let mut p = p0.copied().unwrap_or(*q);
    let mut change = f64::INFINITY;
    for it in 1..=DARE_CAP {
        let pb = p * b;
        let denom = r + (b.transpose() * pb)[0];
        let pa = p * a;
        let bt_pa = b.transpose() * pa;
        let next = q + a.transpose() * pa - (a.transpose() * pb) * bt_pa / denom;
        let next = (next + next.transpose()) * 0.5;
        change = (next - p).abs().max();
        p = next;
        if !change.is_finite() {
            break;
        }
        if change <= DARE_TOL * p.abs().max().max(1.0) {
            return Ok(DareSolution { p, k: gain_from(&p, a, b, r), iterations: it });
        }
    }
    Err(Error::RiccatiDiverged { iterations: DARE_CAP, residual: change })
}

fn gain_from(p: &Matrix4<f64>, a: &Matrix4<f64>, b: &Vector4<f64>, r: f64) -> Gain {
    let denom = r + (b.transpose() * p * b)[0];
    -(b.transpose() * p * a) / denom
}

/// Gains per step: `K^i` for `i ≤ N_c`, then `K^{N_c}` until the long
/// steps, which share a single long-step gain.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    pub short: Vec<Gain>,
    pub long: Gain,
    pub n_control: usize,
    pub n_short: usize,
    /// Riccati solutions kept to warm-start the next controller step.
    pub values: Vec<Matrix4<f64>>,
}

impl GainSchedule {
    pub fn zero(grid: &TimeGrid) -> Self {
        Self {
            short: vec![Gain::zeros(); grid.n_control + 1],
            long: Gain::zeros(),
            n_control: grid.n_control,
            n_short: grid.n_short,
            values: Vec::new(),
        }
    }

    pub fn gain(&self, i: usize) -> Gain {
        if i >= self.n_short {
            self.long
        } else {
            self.short[i.min(self.n_control)]
        }
    }

    /// Gain padded with a zero on `s_d`.
    pub fn gain5(&self, i: usize) -> SMatrix<f64, 1, 5> {
        let k = self.gain(i);
        SMatrix::<f64, 1, 5>::new(k[0], k[1], k[2], k[3], 0.0)
    }
}

/// Closed-loop transition `A_d + B_d K` of one step.
pub fn closed_loop(model: &StepModel, k: &SMatrix<f64, 1, 5>) -> Mat5 {
    model.a_d + model.b_d * k
}

pub fn compute_lqr_gains(
    models: &[StepModel],
    grid: &TimeGrid,
    q: &Matrix4<f64>,
    r: f64,
    warm: Option<&GainSchedule>,
) -> Result<GainSchedule> {
    if models.len() != grid.n_pred() {
        return Err(Error::Dimension(format!("expected {} models, got {}", grid.n_pred(), models.len())));
    }
    let mut indices: Vec<usize> = (0..=grid.n_control).collect();
    indices.push(grid.n_short.min(grid.n_pred() - 1));
    let mut gains = Vec::with_capacity(indices.len());
    let mut values = Vec::with_capacity(indices.len());
    for (slot, &i) in indices.iter().enumerate() {
        let m = &models[i];
        let start = warm
            .and_then(|w| w.values.get(slot).copied())
            .or_else(|| if slot > 0 && slot < indices.len() - 1 { values.last().copied() } else { None });
        let sol = solve_dare(&m.a_stab(), &m.b_stab(), q, r, start.as_ref())?;
        gains.push(sol.k);
        values.push(sol.p);
    }
    let long = gains.pop().expect("long-step gain");
    Ok(GainSchedule { short: gains, long, n_control: grid.n_control, n_short: grid.n_short, values })
}
