//! Stable-handling envelope on lateral velocity and yaw rate.

use nalgebra::{SMatrix, Vector4};

use crate::ltv::Vec5;
use crate::vehicle::{tire_saturation_angle, VehicleParams, GRAVITY};

pub const ENVELOPE_ROWS: usize = 4;

pub const ROW_LABELS: [&str; ENVELOPE_ROWS] = ["latvel_upper", "latvel_lower", "yaw_upper", "yaw_lower"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum YawBound {
    /// `μ g / ẋ`, valid for a neutral-steer vehicle.
    #[default]
    NeutralSteer,
    /// Smaller of the front- and rear-limited steady-state yaw rates.
    AxleLimited,
}

/// `E x ≤ G` with rows `[latvel+, latvel−, yaw+, yaw−]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StabConstraints {
    pub e: SMatrix<f64, ENVELOPE_ROWS, 5>,
    pub g: Vector4<f64>,
}

impl StabConstraints {
    pub fn labels(&self) -> [&'static str; ENVELOPE_ROWS] {
        ROW_LABELS
    }

    /// `G − E x`; negative entries are violations.
    pub fn margins(&self, x: &Vec5) -> Vector4<f64> {
        self.g - self.e * x
    }

    pub fn contains(&self, x: &Vec5) -> bool {
        self.margins(x).iter().all(|&m| m >= 0.0)
    }
}

pub fn yaw_rate_bound(mu: f64, x_dot_p: f64) -> f64 {
    mu * GRAVITY / x_dot_p
}

pub fn yaw_rate_bound_with(params: &VehicleParams, x_dot_p: f64, form: YawBound) -> f64 {
    match form {
        YawBound::NeutralSteer => yaw_rate_bound(params.mu, x_dot_p),
        YawBound::AxleLimited => {
            let l = params.wheelbase();
            let m = params.mass;
            let front = 2.0 * params.mu * params.fz_front * l / (m * params.b * x_dot_p);
            let rear = 2.0 * params.mu * params.fz_rear * l / (m * params.a * x_dot_p);
            front.min(rear)
        }
    }
}

/// The two rear-slip rows `±(ẏ_p − (p + b) φ̇) ≤ ẋ α_r,sat`.
pub fn lat_vel_rows(params: &VehicleParams, x_dot_p: f64) -> ([f64; 5], [f64; 5], f64) {
    let lever = params.cp_distance() + params.b;
    let margin = x_dot_p * tire_saturation_angle(params.c_rear, params.mu, params.fz_rear);
    ([1.0, -lever, 0.0, 0.0, 0.0], [-1.0, lever, 0.0, 0.0, 0.0], margin)
}

pub fn assemble_stab_constraints(params: &VehicleParams, x_dot_p: f64) -> StabConstraints {
    assemble_stab_constraints_with(params, x_dot_p, YawBound::NeutralSteer)
}

pub fn assemble_stab_constraints_with(params: &VehicleParams, x_dot_p: f64, form: YawBound) -> StabConstraints {
    let (upper, lower, margin) = lat_vel_rows(params, x_dot_p);
    let r_max = yaw_rate_bound_with(params, x_dot_p, form);
    let mut e = SMatrix::<f64, ENVELOPE_ROWS, 5>::zeros();
    for j in 0..5 {
        e[(0, j)] = upper[j];
        e[(1, j)] = lower[j];
    }
    e[(2, 1)] = 1.0;
    e[(3, 1)] = -1.0;
    StabConstraints { e, g: Vector4::new(margin, margin, r_max, r_max) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn yaw_bounds() {
        assert_relative_eq!(yaw_rate_bound(0.55, 18.0), 0.29975, max_relative = 1e-14);
        assert_relative_eq!(yaw_rate_bound(0.55, 15.0), 0.3597, max_relative = 1e-14);
        assert_eq!(yaw_rate_bound(0.0, 18.0), 0.0);
    }

    #[test]
    fn yaw_bound_scaling() {
        for mu in [0.3, 0.9] {
            for v in [10.0, 18.0, 30.0] {
                assert_relative_eq!(yaw_rate_bound(mu, v) * v / mu, GRAVITY, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn latvel_margin_at_cruise() {
        let (_, _, margin) = lat_vel_rows(&VehicleParams::default(), 18.0);
        assert_relative_eq!(margin, 18.0 * 0.116406876140734017, max_relative = 1e-14);
        assert!((margin - 2.10).abs() < 0.01);
    }

    #[test]
    fn boundary_is_active() {
        let p = VehicleParams::default();
        let c = assemble_stab_constraints(&p, 18.0);
        let r = 0.1;
        let y = c.g[0] + (p.cp_distance() + p.b) * r;
        let m = c.margins(&Vec5::new(y, r, 0.3, -2.0, 50.0));
        assert!(m[0].abs() < 1e-12);
        assert!(m.iter().all(|&v| v > -1e-12));
    }

    #[test]
    fn origin_interior_and_rows_ignore_path_states() {
        let c = assemble_stab_constraints(&VehicleParams::default(), 18.0);
        assert!(c.g.iter().all(|&g| g > 0.0));
        assert!(c.e.columns(2, 3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn polygon_vertices_feasible() {
        let c = assemble_stab_constraints(&VehicleParams::default(), 18.0);
        let mut vertices = 0;
        for i in 0..4 {
            for j in i + 1..4 {
                let (a1, b1, g1) = (c.e[(i, 0)], c.e[(i, 1)], c.g[i]);
                let (a2, b2, g2) = (c.e[(j, 0)], c.e[(j, 1)], c.g[j]);
                let det = a1 * b2 - a2 * b1;
                if det.abs() < 1e-12 {
                    continue;
                }
                let y = (g1 * b2 - g2 * b1) / det;
                let r = (a1 * g2 - a2 * g1) / det;
                let m = c.margins(&Vec5::new(y, r, 0.0, 0.0, 0.0));
                assert!(m.iter().all(|&v| v > -1e-9));
                vertices += 1;
            }
        }
        assert_eq!(vertices, 4);
    }

    #[test]
    fn axle_limited_form_is_configurable() {
        let p = VehicleParams::default();
        let r = yaw_rate_bound_with(&p, 18.0, YawBound::AxleLimited);
        assert!(r > 0.0 && r.is_finite());
        assert!(r <= 2.0 * p.mu * p.fz_front * p.wheelbase() / (p.mass * p.b * 18.0));
    }
}
