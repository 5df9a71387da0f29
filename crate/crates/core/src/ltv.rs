//! Linear time-varying prediction model.
//!
//! Each prediction step gets its own rear-tire linearisation and frozen
//! path-frame data, taken from the previous controller step's nominal
//! trajectory shifted by one step. The continuous model is written at the
//! centre of percussion over the state `[ẏ_p, φ̇, e_φ, e_y, s_d]` and
//! discretised with an exact zero-order hold on a two-rate time grid.

use nalgebra::{Matrix5, SMatrix, Vector5};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expm::expm;
use crate::path::ReferencePath;
use crate::vehicle::{brush_tire_force, brush_tire_stiffness, ErrorState, VehicleParams};

pub type Mat5 = Matrix5<f64>;
pub type Vec5 = Vector5<f64>;

pub const STATE_DIM: usize = 5;
/// States reachable by steering; `s_d` is the augmented state.
pub const STAB_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeGrid {
    /// Short step duration (s); also the controller period.
    pub t_short: f64,
    pub t_long: f64,
    pub n_short: usize,
    pub n_long: usize,
    /// Control horizon in steps.
    pub n_control: usize,
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self { t_short: 0.03, t_long: 0.2, n_short: 27, n_long: 6, n_control: 10 }
    }
}

impl TimeGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_short > 0.0 && self.t_long > 0.0) {
            return Err(Error::Config("grid step durations must be positive".into()));
        }
        if self.n_control == 0 || self.n_control > self.n_short {
            return Err(Error::Config(format!(
                "control horizon {} must be in 1..={}",
                self.n_control, self.n_short
            )));
        }
        Ok(())
    }

    pub fn n_pred(&self) -> usize {
        self.n_short + self.n_long
    }

    pub fn dt(&self, i: usize) -> f64 {
        if i < self.n_short {
            self.t_short
        } else {
            self.t_long
        }
    }

    pub fn durations(&self) -> Vec<f64> {
        (0..self.n_pred()).map(|i| self.dt(i)).collect()
    }

    /// Start time of every step plus the horizon end (`n_pred + 1` entries).
    pub fn offsets(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_pred() + 1);
        let mut t = 0.0;
        out.push(t);
        for i in 0..self.n_pred() {
            t += self.dt(i);
            out.push(t);
        }
        out
    }

    pub fn horizon(&self) -> f64 {
        self.n_short as f64 * self.t_short + self.n_long as f64 * self.t_long
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RearTireLinearization {
    pub alpha_bar: f64,
    pub force_bar: f64,
    /// Local cornering stiffness `-dF/dα` at `alpha_bar`.
    pub stiffness: f64,
}

/// Path-frame values frozen for one prediction step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FrameData {
    pub e_phi: f64,
    pub e_y: f64,
    pub s_d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepModel {
    pub dt: f64,
    pub a: Mat5,
    pub b: Vec5,
    pub l: Vec5,
    pub a_d: Mat5,
    pub b_d: Vec5,
    pub l_d: Vec5,
    pub linearization: RearTireLinearization,
    pub frame: FrameData,
}

impl StepModel {
    pub fn a_stab(&self) -> SMatrix<f64, 4, 4> {
        self.a_d.fixed_view::<4, 4>(0, 0).into_owned()
    }

    pub fn b_stab(&self) -> SMatrix<f64, 4, 1> {
        self.b_d.fixed_rows::<4>(0).into_owned()
    }

    /// Discrete one-step prediction `A_d x + B_d u + L_d`.
    pub fn step(&self, x: &Vec5, u: f64) -> Vec5 {
        self.a_d * x + self.b_d * u + self.l_d
    }
}

fn shifted<T: Copy>(seq: &[T], n: usize) -> impl Iterator<Item = T> + '_ {
    (0..n).map(move |i| seq[(i + 1).min(seq.len() - 1)])
}

/// Rear slip angles to linearise about at every prediction step.
///
/// `previous` holds the previous controller step's nominal states
/// `s_0..s_{N_p}`; step `i` reuses the prediction for step `i + 1` and the
/// last step holds the second-to-last. Without a previous plan every step
/// uses the measured slip.
pub fn predict_slip_sequence(
    previous: Option<&[Vec5]>,
    measurement: &ErrorState,
    params: &VehicleParams,
    x_dot_p: f64,
    n_pred: usize,
) -> Vec<f64> {
    let p = params.cp_distance();
    let slip = |x: &Vec5| (x[0] - (p + params.b) * x[1]) / x_dot_p;
    match previous {
        Some(states) if states.len() >= n_pred => {
            let slips: Vec<f64> = states[..n_pred].iter().map(slip).collect();
            shifted(&slips, n_pred).collect()
        }
        _ => vec![measurement.rear_slip(params, x_dot_p); n_pred],
    }
}

/// Frozen frame data per step, shifted the same way as the slip sequence.
pub fn predict_frame_sequence(previous: Option<&[Vec5]>, measurement: &ErrorState, n_pred: usize) -> Vec<FrameData> {
    let frame = |x: &Vec5| FrameData { e_phi: x[2], e_y: x[3], s_d: x[4] };
    match previous {
        Some(states) if states.len() >= n_pred => {
            let frames: Vec<FrameData> = states[..n_pred].iter().map(frame).collect();
            shifted(&frames, n_pred).collect()
        }
        _ => vec![frame(&measurement.to_vector()); n_pred],
    }
}

pub fn linearize_rear_tire(alpha_bar: f64, params: &VehicleParams) -> Result<RearTireLinearization> {
    if !alpha_bar.is_finite() {
        return Err(Error::NonFinite("rear slip linearisation point"));
    }
    Ok(RearTireLinearization {
        alpha_bar,
        force_bar: brush_tire_force(alpha_bar, params.c_rear, params.mu, params.fz_rear)?,
        stiffness: brush_tire_stiffness(alpha_bar, params.c_rear, params.mu, params.fz_rear),
    })
}

/// Continuous-time `(A, B, L)` of `Ẋ = A X + B u + L` for one step.
///
/// `u` is the per-tire front lateral force.
pub fn build_continuous_matrices(
    lin: &RearTireLinearization,
    frame: &FrameData,
    x_dot_p: f64,
    params: &VehicleParams,
    path: &ReferencePath,
) -> Result<(Mat5, Vec5, Vec5)> {
    if !(x_dot_p > 0.0) {
        return Err(Error::NonPositiveSpeed(x_dot_p));
    }
    let kappa = path.curvature_at(frame.s_d);
    let denom = 1.0 - kappa * frame.e_y;
    if denom <= 0.0 {
        return Err(Error::SingularFrame(denom));
    }
    let VehicleParams { mass: m, yaw_inertia: iz, a, b, .. } = *params;
    let p = params.cp_distance();
    let c_bar = lin.stiffness;
    let yaw = 2.0 * b * c_bar / (iz * x_dot_p);

    #[rustfmt::skip]
    let a_mat = Mat5::new(
        0.0, -x_dot_p, 0.0, 0.0, 0.0,
        yaw, -yaw * (b + p), 0.0, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0, 0.0,
        1.0, -p, x_dot_p, 0.0, 0.0,
        -frame.e_phi / denom, p * frame.e_phi / denom, 0.0, 0.0, 0.0,
    );
    let b_vec = Vec5::new(2.0 / m + 2.0 * a / (m * b), 2.0 * a / iz, 0.0, 0.0, 0.0);
    let l_vec = Vec5::new(
        0.0,
        -2.0 * b * lin.force_bar / iz - 2.0 * b * c_bar / iz * lin.alpha_bar,
        -x_dot_p * kappa,
        0.0,
        x_dot_p,
    );
    Ok((a_mat, b_vec, l_vec))
}

/// Exact zero-order-hold discretisation of `(A, B, L)` over `dt`.
pub fn discretize_zoh(a: &Mat5, b: &Vec5, l: &Vec5, dt: f64) -> (Mat5, Vec5, Vec5) {
    let mut aug = SMatrix::<f64, 7, 7>::zeros();
    aug.fixed_view_mut::<5, 5>(0, 0).copy_from(&(a * dt));
    aug.fixed_view_mut::<5, 1>(0, 5).copy_from(&(b * dt));
    aug.fixed_view_mut::<5, 1>(0, 6).copy_from(&(l * dt));
    let e = expm(&aug);
    (
        e.fixed_view::<5, 5>(0, 0).into_owned(),
        e.fixed_view::<5, 1>(0, 5).into_owned(),
        e.fixed_view::<5, 1>(0, 6).into_owned(),
    )
}

/// Builds the full sequence of step models for one controller step.
pub fn build_prediction_models(
    measurement: &ErrorState,
    previous: Option<&[Vec5]>,
    path: &ReferencePath,
    params: &VehicleParams,
    grid: &TimeGrid,
    x_dot_p: f64,
) -> Result<Vec<StepModel>> {
    if !measurement.is_finite() {
        return Err(Error::NonFinite("measurement"));
    }
    let n = grid.n_pred();
    let slips = predict_slip_sequence(previous, measurement, params, x_dot_p, n);
    let frames = predict_frame_sequence(previous, measurement, n);
    slips
        .iter()
        .zip(&frames)
        .enumerate()
        .map(|(i, (alpha, frame))| {
            let lin = linearize_rear_tire(*alpha, params)?;
            let (a, b, l) = build_continuous_matrices(&lin, frame, x_dot_p, params, path)?;
            let dt = grid.dt(i);
            let (a_d, b_d, l_d) = discretize_zoh(&a, &b, &l, dt);
            Ok(StepModel { dt, a, b, l, a_d, b_d, l_d, linearization: lin, frame: *frame })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::tire_saturation_angle;
    use approx::assert_relative_eq;

    // Independent oracle: fine RK4 on the continuous affine system.
    fn rk4(a: &Mat5, b: &Vec5, l: &Vec5, x0: &Vec5, u: f64, dt: f64, steps: usize) -> Vec5 {
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

    #[test]
    fn grid_defaults() {
        let g = TimeGrid::default();
        assert_eq!(g.n_pred(), 33);
        assert_relative_eq!(g.horizon(), 2.01, max_relative = 1e-12);
        assert_relative_eq!(g.durations().iter().sum::<f64>(), 2.01, max_relative = 1e-12);
        assert_eq!(g.dt(26), 0.03);
        assert_eq!(g.dt(27), 0.2);
        assert!(TimeGrid { n_control: 28, ..g }.validate().is_err());
    }

    #[test]
    fn slip_sequence_rules() {
        let params = VehicleParams::default();
        let meas = ErrorState { y_dot_p: 0.18, ..Default::default() };
        let cold = predict_slip_sequence(None, &meas, &params, 18.0, 33);
        assert_eq!(cold.len(), 33);
        assert!(cold.iter().all(|&a| (a - 0.01).abs() < 1e-15));

        let prev: Vec<Vec5> = (0..34).map(|i| Vec5::new(18.0 * i as f64 * 1e-3, 0.0, 0.0, 0.0, 0.0)).collect();
        let warm = predict_slip_sequence(Some(&prev), &meas, &params, 18.0, 33);
        for i in 0..32 {
            assert_relative_eq!(warm[i], (i + 1) as f64 * 1e-3, max_relative = 1e-12);
        }
        assert_eq!(warm[32], warm[31]);
    }

    #[test]
    fn rear_linearization_cases() {
        let p = VehicleParams::default();
        let zero = linearize_rear_tire(0.0, &p).unwrap();
        assert_eq!(zero.stiffness, 38160.0);
        assert_eq!(zero.force_bar, 0.0);
        let sat = linearize_rear_tire(tire_saturation_angle(p.c_rear, p.mu, p.fz_rear), &p).unwrap();
        assert_eq!(sat.stiffness, 0.0);
        assert_relative_eq!(sat.force_bar, -p.mu * p.fz_rear, max_relative = 1e-12);
        let mid = linearize_rear_tire(0.05, &p).unwrap();
        let h = 1e-6;
        let fd = -(brush_tire_force(0.05 + h, p.c_rear, p.mu, p.fz_rear).unwrap()
            - brush_tire_force(0.05 - h, p.c_rear, p.mu, p.fz_rear).unwrap())
            / (2.0 * h);
        assert_relative_eq!(mid.stiffness, fd, max_relative = 1e-4);
    }

    #[test]
    fn continuous_matrix_entries() {
        let p = VehicleParams::default();
        let lin = linearize_rear_tire(0.0, &p).unwrap();
        let path = ReferencePath::straight(100.0);
        let (a, b, l) = build_continuous_matrices(&lin, &FrameData::default(), 18.0, &p, &path).unwrap();
        assert_relative_eq!(b[0], 0.0026455026455026455, max_relative = 1e-14);
        assert_relative_eq!(b[1], 0.0015486560941106396, max_relative = 1e-14);
        assert_relative_eq!(a[(1, 0)], 4.924726379271834, max_relative = 1e-14);
        assert_relative_eq!(a[(1, 1)], -4.924726379271834 * (1.56 + p.cp_distance()), max_relative = 1e-14);
        assert!(a.row(4).iter().all(|&v| v == 0.0));
        assert_eq!(l, Vec5::new(0.0, 0.0, 0.0, 0.0, 18.0));
        assert_eq!(b[4], 0.0);

        let arc = ReferencePath::arc(400.0, 300.0);
        let (_, _, l) = build_continuous_matrices(&lin, &FrameData::default(), 18.0, &p, &arc).unwrap();
        assert_relative_eq!(l[2], -18.0 / 400.0, max_relative = 1e-15);
        let bad = FrameData { e_y: 401.0, ..Default::default() };
        assert!(build_continuous_matrices(&lin, &bad, 18.0, &p, &arc).is_err());
    }

    #[test]
    fn zoh_closed_forms() {
        let b0 = Vec5::new(1.0, 2.0, 0.0, -1.0, 0.5);
        let l0 = Vec5::new(0.0, 0.3, 0.1, 0.0, 18.0);
        let (ad, bd, ld) = discretize_zoh(&Mat5::zeros(), &b0, &l0, 0.2);
        assert!((ad - Mat5::identity()).abs().max() < 1e-15);
        assert!((bd - b0 * 0.2).abs().max() < 1e-15);
        assert!((ld - l0 * 0.2).abs().max() < 1e-14);

        let mut a = Mat5::zeros();
        a[(0, 0)] = -1.0;
        let (ad, bd, _) = discretize_zoh(&a, &Vec5::new(1.0, 0.0, 0.0, 0.0, 0.0), &Vec5::zeros(), 0.03);
        assert_relative_eq!(ad[(0, 0)], (-0.03f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(bd[0], 1.0 - (-0.03f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn zoh_matches_rk4_on_vehicle_models() {
        let p = VehicleParams::default();
        let arc = ReferencePath::arc(400.0, 300.0);
        let frame = FrameData { e_phi: 0.05, e_y: 1.5, s_d: 20.0 };
        for alpha in [0.0, 0.03, 0.09] {
            let lin = linearize_rear_tire(alpha, &p).unwrap();
            let (a, b, l) = build_continuous_matrices(&lin, &frame, 18.0, &p, &arc).unwrap();
            for dt in [0.03, 0.2] {
                let (ad, bd, ld) = discretize_zoh(&a, &b, &l, dt);
                let x0 = Vec5::new(0.4, -0.1, 0.05, 1.2, 20.0);
                let u = 800.0;
                let exact = rk4(&a, &b, &l, &x0, u, dt, 1000);
                let zoh = ad * x0 + bd * u + ld;
                assert!((zoh - exact).norm() / exact.norm() < 1e-8, "alpha {alpha} dt {dt}");
            }
        }
    }

    #[test]
    fn cold_start_models_on_straight_and_curve() {
        let p = VehicleParams::default();
        let g = TimeGrid::default();
        let meas = ErrorState::default();
        let straight = build_prediction_models(&meas, None, &ReferencePath::straight(300.0), &p, &g, 18.0).unwrap();
        assert_eq!(straight.len(), 33);
        for m in &straight[1..27] {
            assert_eq!(m.a_d, straight[0].a_d);
            assert_eq!(m.l[2], 0.0);
        }
        let curved = build_prediction_models(&meas, None, &ReferencePath::arc(400.0, 300.0), &p, &g, 18.0).unwrap();
        assert!(curved.iter().all(|m| (m.l[2] + 0.045).abs() < 1e-15));
    }

    #[test]
    fn augmented_block_structure() {
        let p = VehicleParams::default();
        let g = TimeGrid::default();
        let meas = ErrorState { y_dot_p: 0.3, phi_dot: 0.05, e_phi: 0.0, e_y: 0.5, s_d: 10.0 };
        let models = build_prediction_models(&meas, None, &ReferencePath::arc(400.0, 300.0), &p, &g, 18.0).unwrap();
        for m in &models {
            let mut e5 = Vec5::zeros();
            e5[4] = 1.0;
            assert_eq!(m.a_d.column(4).into_owned(), e5);
            assert_eq!(m.b[4], 0.0);
            // e_φ frozen at zero decouples s_d from the lateral states
            assert!(m.a_d.row(4).columns(0, 4).iter().all(|v| v.abs() < 1e-15));
        }
    }
}
