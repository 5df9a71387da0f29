//! Nonlinear single-track vehicle model with a brush tire.
//!
//! Tire quantities are per tire; the factor of two for each axle lives in the
//! body dynamics. Lateral positions and slip follow the ISO convention with
//! left positive, so a positive slip angle produces a negative lateral force.

use nalgebra::Vector5;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path::ReferencePath;

/// Gravitational acceleration (m/s²).
pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    /// Mass (kg).
    pub mass: f64,
    /// Yaw inertia (kg·m²).
    pub yaw_inertia: f64,
    /// CG to front axle (m).
    pub a: f64,
    /// CG to rear axle (m).
    pub b: f64,
    /// Track width (m).
    pub width: f64,
    /// Per-tire cornering stiffness, front (N/rad).
    pub c_front: f64,
    /// Per-tire cornering stiffness, rear (N/rad).
    pub c_rear: f64,
    /// Per-tire normal load, front (N).
    pub fz_front: f64,
    /// Per-tire normal load, rear (N).
    pub fz_rear: f64,
    /// Tire-road friction coefficient.
    pub mu: f64,
}

impl Default for VehicleParams {
    /// B-class hatchback used throughout the shipped scenarios.
    fn default() -> Self {
        Self {
            mass: 1260.0,
            yaw_inertia: 1343.1,
            a: 1.04,
            b: 1.56,
            width: 1.695,
            c_front: 51650.0,
            c_rear: 38160.0,
            fz_front: 2704.4,
            fz_rear: 2704.4,
            mu: 0.55,
        }
    }
}

impl VehicleParams {
    pub fn wheelbase(&self) -> f64 {
        self.a + self.b
    }

    /// Distance from the CG forward to the centre of percussion, `Iz / (m b)`.
    pub fn cp_distance(&self) -> f64 {
        self.yaw_inertia / (self.mass * self.b)
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("mass", self.mass),
            ("yaw_inertia", self.yaw_inertia),
            ("a", self.a),
            ("b", self.b),
            ("width", self.width),
            ("c_front", self.c_front),
            ("c_rear", self.c_rear),
            ("fz_front", self.fz_front),
            ("fz_rear", self.fz_rear),
            ("mu", self.mu),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("vehicle.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Pose and body velocities in the global frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GlobalState {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
    /// Body lateral velocity at the CG (m/s).
    pub y_dot: f64,
    /// Longitudinal velocity (m/s), positive.
    pub x_dot: f64,
    pub phi_dot: f64,
}

/// Controller state `[ẏ_p, φ̇, e_φ, e_y, s_d]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorState {
    pub y_dot_p: f64,
    pub phi_dot: f64,
    pub e_phi: f64,
    pub e_y: f64,
    pub s_d: f64,
}

impl ErrorState {
    pub fn to_vector(&self) -> Vector5<f64> {
        Vector5::new(self.y_dot_p, self.phi_dot, self.e_phi, self.e_y, self.s_d)
    }

    pub fn from_vector(v: &Vector5<f64>) -> Self {
        Self { y_dot_p: v[0], phi_dot: v[1], e_phi: v[2], e_y: v[3], s_d: v[4] }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }

    /// Rear slip angle from the CP quantities, small-angle form.
    pub fn rear_slip(&self, params: &VehicleParams, x_dot_p: f64) -> f64 {
        let p = params.cp_distance();
        (self.y_dot_p - (p + params.b) * self.phi_dot) / x_dot_p
    }
}

/// Full plant state: global pose and velocities plus path-frame errors.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantState {
    pub global: GlobalState,
    pub e_phi: f64,
    pub e_y: f64,
    pub s_d: f64,
}

impl PlantState {
    pub fn error_state(&self, params: &VehicleParams) -> ErrorState {
        ErrorState {
            y_dot_p: cp_lateral_velocity(self.global.y_dot, self.global.phi_dot, params.cp_distance()),
            phi_dot: self.global.phi_dot,
            e_phi: self.e_phi,
            e_y: self.e_y,
            s_d: self.s_d,
        }
    }

    fn axpy(&self, k: f64, d: &PlantState) -> PlantState {
        PlantState {
            global: GlobalState {
                x: self.global.x + k * d.global.x,
                y: self.global.y + k * d.global.y,
                phi: self.global.phi + k * d.global.phi,
                y_dot: self.global.y_dot + k * d.global.y_dot,
                x_dot: self.global.x_dot + k * d.global.x_dot,
                phi_dot: self.global.phi_dot + k * d.global.phi_dot,
            },
            e_phi: self.e_phi + k * d.e_phi,
            e_y: self.e_y + k * d.e_y,
            s_d: self.s_d + k * d.s_d,
        }
    }
}

/// Slip angle at which the brush tire is fully sliding, `atan(3 μ Fz / C)`.
pub fn tire_saturation_angle(c: f64, mu: f64, fz: f64) -> f64 {
    (3.0 * mu * fz / c).atan()
}

/// Brush tire lateral force for one tire (N).
pub fn brush_tire_force(alpha: f64, c: f64, mu: f64, fz: f64) -> Result<f64> {
    if !alpha.is_finite() {
        return Err(Error::NonFinite("slip angle"));
    }
    let theta = 3.0 * mu * fz / c;
    if alpha.abs() < theta.atan() {
        let t = alpha.tan();
        Ok(-c * t + c / theta * t.abs() * t - c / (3.0 * theta * theta) * t * t * t)
    } else {
        Ok(-mu * fz * alpha.signum())
    }
}

/// Local cornering stiffness `-dF/dα` of the brush tire, zero once saturated.
pub fn brush_tire_stiffness(alpha: f64, c: f64, mu: f64, fz: f64) -> f64 {
    let theta = 3.0 * mu * fz / c;
    if alpha.abs() >= theta.atan() {
        return 0.0;
    }
    let t = alpha.tan();
    let d_dt = -c + 2.0 * c / theta * t.abs() - c / (theta * theta) * t * t;
    let sec2 = 1.0 + t * t;
    // Clamp tiny negative round-off near saturation.
    (-d_dt * sec2).max(0.0)
}

/// Slip angle producing `force` on the monotone branch; saturates to `∓α_sat`.
pub fn inverse_tire_force(force: f64, c: f64, mu: f64, fz: f64) -> f64 {
    let f_max = mu * fz;
    let alpha_sat = tire_saturation_angle(c, mu, fz);
    if !force.is_finite() || force.abs() >= f_max {
        return -force.signum() * alpha_sat;
    }
    // |F| / μFz = 1 - (1 - u)^3 with u = C |tan α| / (3 μ Fz)
    let u = 1.0 - (1.0 - force.abs() / f_max).cbrt();
    let t = u * 3.0 * f_max / c;
    -force.signum() * t.atan()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlipForm {
    SmallAngle,
    Exact,
}

/// Front and rear slip angles `(α_f, α_r)`.
pub fn slip_angles(state: &GlobalState, delta: f64, params: &VehicleParams, form: SlipForm) -> Result<(f64, f64)> {
    if !(state.x_dot > 0.0) {
        return Err(Error::NonPositiveSpeed(state.x_dot));
    }
    let front = (state.y_dot + params.a * state.phi_dot) / state.x_dot;
    let rear = (state.y_dot - params.b * state.phi_dot) / state.x_dot;
    Ok(match form {
        SlipForm::SmallAngle => (front - delta, rear),
        SlipForm::Exact => (front.atan() - delta, rear.atan()),
    })
}

pub fn cp_lateral_velocity(y_dot: f64, phi_dot: f64, p: f64) -> f64 {
    y_dot + p * phi_dot
}

/// Per-tire lateral forces `(F_yf, F_yr)` in the body frame for the plant.
pub fn axle_forces(state: &GlobalState, delta: f64, params: &VehicleParams, mu: f64) -> Result<(f64, f64)> {
    let (alpha_f, alpha_r) = slip_angles(state, delta, params, SlipForm::Exact)?;
    let f_cf = brush_tire_force(alpha_f, params.c_front, mu, params.fz_front)?;
    let f_cr = brush_tire_force(alpha_r, params.c_rear, mu, params.fz_rear)?;
    // No longitudinal tire force, so only the cornering force is rotated.
    Ok((f_cf * delta.cos(), f_cr))
}

/// Body accelerations `(ÿ, φ̈)` for given per-tire lateral forces.
pub fn body_accelerations(state: &GlobalState, f_yf: f64, f_yr: f64, params: &VehicleParams) -> (f64, f64) {
    let y_ddot = -state.x_dot * state.phi_dot + 2.0 * (f_yf + f_yr) / params.mass;
    let phi_ddot = (2.0 * params.a * f_yf - 2.0 * params.b * f_yr) / params.yaw_inertia;
    (y_ddot, phi_ddot)
}

/// Time derivative of the plant state at constant longitudinal speed.
pub fn plant_derivative(
    state: &PlantState,
    delta: f64,
    params: &VehicleParams,
    mu_actual: f64,
    path: &ReferencePath,
) -> Result<PlantState> {
    let g = &state.global;
    let (f_yf, f_yr) = axle_forces(g, delta, params, mu_actual)?;
    let (y_ddot, phi_ddot) = body_accelerations(g, f_yf, f_yr, params);

    let kappa = path.curvature_at(state.s_d);
    let denom = 1.0 - kappa * state.e_y;
    if denom <= 0.0 {
        return Err(Error::SingularFrame(denom));
    }
    let (sin_e, cos_e) = state.e_phi.sin_cos();
    let s_dot = (g.x_dot * cos_e - g.y_dot * sin_e) / denom;
    let (sin_p, cos_p) = g.phi.sin_cos();

    Ok(PlantState {
        global: GlobalState {
            x: g.x_dot * cos_p - g.y_dot * sin_p,
            y: g.x_dot * sin_p + g.y_dot * cos_p,
            phi: g.phi_dot,
            y_dot: y_ddot,
            x_dot: 0.0,
            phi_dot: phi_ddot,
        },
        e_phi: g.phi_dot - kappa * s_dot,
        e_y: g.y_dot * cos_e + g.x_dot * sin_e,
        s_d: s_dot,
    })
}

/// One classic RK4 step of the plant with the steering angle held.
pub fn rk4_step(
    state: &PlantState,
    delta: f64,
    params: &VehicleParams,
    mu_actual: f64,
    path: &ReferencePath,
    h: f64,
) -> Result<PlantState> {
    let k1 = plant_derivative(state, delta, params, mu_actual, path)?;
    let k2 = plant_derivative(&state.axpy(0.5 * h, &k1), delta, params, mu_actual, path)?;
    let k3 = plant_derivative(&state.axpy(0.5 * h, &k2), delta, params, mu_actual, path)?;
    let k4 = plant_derivative(&state.axpy(h, &k3), delta, params, mu_actual, path)?;
    let mut next = *state;
    next = next.axpy(h / 6.0, &k1);
    next = next.axpy(h / 3.0, &k2);
    next = next.axpy(h / 3.0, &k3);
    next = next.axpy(h / 6.0, &k4);
    Ok(next)
}

/// Steady cornering on a constant-curvature path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyCornering {
    pub y_dot: f64,
    pub phi_dot: f64,
    pub delta: f64,
    /// Heading error that keeps `ė_y = 0`.
    pub e_phi: f64,
}

/// Solves the nonlinear plant equilibrium that tracks a constant-curvature path.
pub fn steady_cornering(params: &VehicleParams, mu: f64, x_dot: f64, kappa: f64) -> Result<SteadyCornering> {
    if !(x_dot > 0.0) {
        return Err(Error::NonPositiveSpeed(x_dot));
    }
    // Path speed equals the full planar speed when ė_y = 0.
    let yaw_rate = |y_dot: f64| kappa * x_dot.hypot(y_dot);
    let residual = |y_dot: f64, delta: f64| -> Result<(f64, f64)> {
        let g = GlobalState { y_dot, x_dot, phi_dot: yaw_rate(y_dot), ..Default::default() };
        let (f_yf, f_yr) = axle_forces(&g, delta, params, mu)?;
        let (ydd, pdd) = body_accelerations(&g, f_yf, f_yr, params);
        Ok((ydd, pdd))
    };
    let (mut y_dot, mut delta) = (0.0, params.wheelbase() * kappa);
    for _ in 0..100 {
        let (r0, r1) = residual(y_dot, delta)?;
        if r0.abs().max(r1.abs()) < 1e-12 {
            break;
        }
        let h = 1e-7;
        let (a0, a1) = residual(y_dot + h, delta)?;
        let (b0, b1) = residual(y_dot, delta + h)?;
        let j = [[(a0 - r0) / h, (b0 - r0) / h], [(a1 - r1) / h, (b1 - r1) / h]];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.abs() < 1e-300 {
            return Err(Error::Config("steady cornering is not reachable at this speed".into()));
        }
        y_dot -= (j[1][1] * r0 - j[0][1] * r1) / det;
        delta -= (-j[1][0] * r0 + j[0][0] * r1) / det;
    }
    let (r0, r1) = residual(y_dot, delta)?;
    if r0.abs().max(r1.abs()) > 1e-8 {
        return Err(Error::Config("steady cornering is not reachable at this speed".into()));
    }
    Ok(SteadyCornering { y_dot, phi_dot: yaw_rate(y_dot), delta, e_phi: -(y_dot / x_dot).atan() })
}
