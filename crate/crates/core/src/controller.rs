//! Robust tube MPC steering controller.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Matrix4, SMatrix, Vector4};
use serde::{Deserialize, Serialize};

use crate::envelope::{assemble_stab_constraints, StabConstraints, ENVELOPE_ROWS};
use crate::error::{Error, Result};
use crate::lqr::{compute_lqr_gains, GainSchedule};
use crate::ltv::{build_prediction_models, Mat5, StepModel, TimeGrid, Vec5};
use crate::path::{ReferencePath, RoadBounds};
use crate::qp::{solve_qp, KktResiduals, QpProblem, QpSettings};
use crate::tube::{build_active_constraints, build_tube, error_transition, stretch_obstacles, DisturbanceSet, Obstacle, TubeBounds};
use crate::vehicle::{inverse_tire_force, ErrorState, VehicleParams, GRAVITY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Rmpc,
    Dmpc,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rmpc" => Ok(Mode::Rmpc),
            "dmpc" => Ok(Mode::Dmpc),
            other => Err(Error::Config(format!("unknown controller mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Rmpc => "rmpc",
            Mode::Dmpc => "dmpc",
        })
    }
}

/// Cost weights and the normalisation scales they apply to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QpWeights {
    /// State weights over `[ẏ_p, φ̇, e_φ, e_y, s_d]`.
    pub q: [f64; 5],
    pub r: f64,
    pub s: f64,
    pub lambda_coll: f64,
    /// Envelope slack weights in row order `[latvel+, latvel−, yaw+, yaw−]`.
    pub lambda_stab: [f64; 4],
    /// Expected lateral error scale (m).
    pub e_y_max: f64,
    /// Expected heading error scale (rad).
    #[serde(default = "default_e_phi_max")]
    pub e_phi_max: f64,
    /// Lateral velocity scale as a fraction of speed.
    #[serde(default = "default_lat_vel_factor")]
    pub lat_vel_factor: f64,
    /// Yaw rate scale as a fraction of `μ g / ẋ`.
    #[serde(default = "default_yaw_rate_factor")]
    pub yaw_rate_factor: f64,
    /// Maximum front force rate (N/s).
    #[serde(default = "default_du_max")]
    pub du_max: f64,
    /// Linear slack weight as a multiple of the quadratic one, so slacks
    /// stay exactly zero whenever the hard constraints can be met.
    #[serde(default = "default_slack_linear")]
    pub slack_linear: f64,
}

fn default_e_phi_max() -> f64 {
    0.2
}
fn default_lat_vel_factor() -> f64 {
    0.2
}
fn default_yaw_rate_factor() -> f64 {
    0.9
}
fn default_du_max() -> f64 {
    12_000.0
}
fn default_slack_linear() -> f64 {
    1.0
}

impl QpWeights {
    pub fn avoidance() -> Self {
        Self {
            q: [1.0, 1.0, 1.0, 5.0, 0.0],
            r: 4.0,
            s: 4.0,
            lambda_coll: 1e5,
            lambda_stab: [500.0, 500.0, 5e5, 5e5],
            e_y_max: 3.8,
            e_phi_max: default_e_phi_max(),
            lat_vel_factor: default_lat_vel_factor(),
            yaw_rate_factor: default_yaw_rate_factor(),
            du_max: default_du_max(),
            slack_linear: default_slack_linear(),
        }
    }

    pub fn tracking() -> Self {
        Self {
            q: [1.0, 5.0, 1.0, 10.0, 0.0],
            lambda_stab: [5e4, 5e4, 1e6, 1e6],
            e_y_max: 3.1,
            ..Self::avoidance()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.r, self.s, self.lambda_coll, self.e_y_max, self.e_phi_max, self.lat_vel_factor, self.yaw_rate_factor, self.du_max];
        if positive.iter().chain(&self.lambda_stab).any(|v| !(v.is_finite() && *v > 0.0))
            || !(self.slack_linear.is_finite() && self.slack_linear >= 0.0)
            || self.q.iter().any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::Config(format!("invalid weights {self:?}")));
        }
        Ok(())
    }

    /// Per-state normalisation scales; `s_d` is left unscaled.
    pub fn state_scales(&self, params: &VehicleParams, x_dot_p: f64) -> [f64; 5] {
        [
            self.lat_vel_factor * x_dot_p,
            self.yaw_rate_factor * params.mu * GRAVITY / x_dot_p,
            self.e_phi_max,
            self.e_y_max,
            1.0,
        ]
    }

    /// LQR weights over the stabilisable states, normalised like the cost.
    pub fn lqr_weights(&self, params: &VehicleParams, x_dot_p: f64) -> (Matrix4<f64>, f64) {
        let sc = self.state_scales(params, x_dot_p);
        let q = Matrix4::from_diagonal(&Vector4::new(
            self.q[0] / sc[0].powi(2),
            self.q[1] / sc[1].powi(2),
            self.q[2] / sc[2].powi(2),
            self.q[3] / sc[3].powi(2),
        ));
        (q, self.r / input_scale(params).powi(2))
    }
}

/// Maximum expected per-tire front force `μ Fz_f`.
pub fn input_scale(params: &VehicleParams) -> f64 {
    params.mu * params.fz_front
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    /// Model parameters with the controller's friction estimate.
    pub params: VehicleParams,
    pub grid: TimeGrid,
    pub avoidance: QpWeights,
    pub tracking: QpWeights,
    pub disturbance: DisturbanceSet,
    pub mode: Mode,
    /// Steering hardware limit (rad).
    pub steer_limit: f64,
    pub qp: QpSettings,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            params: VehicleParams::default(),
            grid: TimeGrid::default(),
            avoidance: QpWeights::avoidance(),
            tracking: QpWeights::tracking(),
            disturbance: DisturbanceSet::default(),
            mode: Mode::Rmpc,
            steer_limit: 30f64.to_radians(),
            qp: QpSettings::default(),
        }
    }
}

/// Environment seen by the controller at one step.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub path: &'a ReferencePath,
    pub road: &'a RoadBounds,
    /// Obstacles currently perceived, unstretched.
    pub obstacles: &'a [Obstacle],
    pub x_dot_p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSolution {
    /// Nominal front-force perturbations `c_0..c_{N_c−1}` (N).
    pub c: Vec<f64>,
    /// Nominal states `s_0..s_{N_p}`.
    pub states: Vec<Vec5>,
    /// Total nominal input `K s_i + c_i` per step (N).
    pub inputs: Vec<f64>,
    pub eps_stab: [f64; ENVELOPE_ROWS],
    pub eps_coll: f64,
    pub objective: f64,
    pub iterations: usize,
    pub residuals: KktResiduals,
    pub solve_time: Duration,
}

/// Dense QP plus the affine state map used to build it.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledQp {
    pub problem: QpProblem,
    /// `s_i = F_i z + f_i`.
    pub state_maps: Vec<(SMatrix<f64, 5, MAX_VARS>, Vec5)>,
    pub n_vars: usize,
    pub u_max: f64,
}

/// Upper bound on decision variables supported by the fixed-size state maps.
pub const MAX_VARS: usize = 32;

/// Everything needed to assemble the QP of one controller step.
pub struct QpInputs<'a> {
    pub models: &'a [StepModel],
    pub gains: &'a GainSchedule,
    pub tube: &'a TubeBounds,
    pub stab: &'a StabConstraints,
    pub weights: &'a QpWeights,
    pub params: &'a VehicleParams,
    pub grid: &'a TimeGrid,
    pub x0: Vec5,
    pub c_prev: f64,
    pub x_dot_p: f64,
}

struct CostBuilder {
    p: DMatrix<f64>,
    q: DVector<f64>,
    r: f64,
}

impl CostBuilder {
    /// Adds `w (a·z + b)²`.
    fn square(&mut self, w: f64, a: &[f64], b: f64) {
        for (i, ai) in a.iter().enumerate() {
            if *ai == 0.0 {
                continue;
            }
            for (j, aj) in a.iter().enumerate() {
                self.p[(i, j)] += 2.0 * w * ai * aj;
            }
            self.q[i] += 2.0 * w * b * ai;
        }
        self.r += w * b * b;
    }
}

pub fn assemble_qp(inp: &QpInputs<'_>) -> Result<AssembledQp> {
    let grid = inp.grid;
    let n_c = grid.n_control;
    let n_p = grid.n_pred();
    let n = n_c + ENVELOPE_ROWS + 1;
    if n > MAX_VARS {
        return Err(Error::Dimension(format!("{n} decision variables exceed the supported {MAX_VARS}")));
    }
    if inp.models.len() != n_p || inp.tube.bounds.len() != n_p + 1 {
        return Err(Error::Dimension(format!(
            "{} models and {} tube samples for a horizon of {n_p}",
            inp.models.len(),
            inp.tube.bounds.len()
        )));
    }
    let u_max = input_scale(inp.params);
    let eps_stab = |j: usize| n_c + j;
    let eps_coll = n_c + ENVELOPE_ROWS;

    // forward substitution of the nominal dynamics
    let mut maps = Vec::with_capacity(n_p + 1);
    let mut f_mat = SMatrix::<f64, 5, MAX_VARS>::zeros();
    let mut f_vec = inp.x0;
    maps.push((f_mat, f_vec));
    for i in 0..n_p {
        let m = &inp.models[i];
        let phi: Mat5 = m.a_d + m.b_d * inp.gains.gain5(i);
        let mut next = phi * f_mat;
        let col = i.min(n_c - 1);
        for r in 0..5 {
            next[(r, col)] += m.b_d[r] * u_max;
        }
        f_vec = phi * f_vec + m.l_d;
        f_mat = next;
        maps.push((f_mat, f_vec));
    }

    let w = inp.weights;
    let scales = w.state_scales(inp.params, inp.x_dot_p);
    let mut cost = CostBuilder { p: DMatrix::zeros(n, n), q: DVector::zeros(n), r: 0.0 };
    let mut row = vec![0.0; n];
    for (f, fv) in maps.iter().skip(1) {
        for j in 0..5 {
            if w.q[j] == 0.0 {
                continue;
            }
            for (k, v) in row.iter_mut().enumerate() {
                *v = f[(j, k)] / scales[j];
            }
            cost.square(w.q[j], &row, fv[j] / scales[j]);
        }
    }
    for i in 0..n_p {
        row.iter_mut().for_each(|v| *v = 0.0);
        row[i.min(n_c - 1)] = 1.0;
        cost.square(w.r, &row, 0.0);
    }
    let rate_scale = w.du_max * grid.t_short / u_max;
    for i in 0..n_c {
        row.iter_mut().for_each(|v| *v = 0.0);
        row[i] = 1.0 / rate_scale;
        let offset = if i == 0 { -inp.c_prev / u_max / rate_scale } else { 0.0 };
        if i > 0 {
            row[i - 1] = -1.0 / rate_scale;
        }
        cost.square(w.s, &row, offset);
    }
    for j in 0..ENVELOPE_ROWS {
        cost.p[(eps_stab(j), eps_stab(j))] += 2.0 * w.lambda_stab[j];
        cost.q[eps_stab(j)] += w.slack_linear * w.lambda_stab[j];
    }
    cost.p[(eps_coll, eps_coll)] += 2.0 * w.lambda_coll;
    cost.q[eps_coll] += w.slack_linear * w.lambda_coll;

    let mut g_rows: Vec<Vec<f64>> = Vec::with_capacity(6 * n_p + 4 * n_c + ENVELOPE_ROWS + 1);
    let mut h: Vec<f64> = Vec::with_capacity(g_rows.capacity());
    for (i, (f, fv)) in maps.iter().enumerate().skip(1) {
        let (lo, hi) = inp.tube.bounds[i];
        for (sign, bound) in [(1.0, hi), (-1.0, -lo)] {
            let mut g = vec![0.0; n];
            for k in 0..n_c {
                g[k] = sign * f[(3, k)];
            }
            g[eps_coll] = -1.0;
            g_rows.push(g);
            h.push(bound - sign * fv[3]);
        }
        for r in 0..ENVELOPE_ROWS {
            let e = inp.stab.e.row(r);
            let mut g = vec![0.0; n];
            for k in 0..n_c {
                g[k] = (0..5).map(|j| e[j] * f[(j, k)]).sum();
            }
            g[eps_stab(r)] = -1.0;
            g_rows.push(g);
            h.push(inp.stab.g[r] - (0..5).map(|j| e[j] * fv[j]).sum::<f64>());
        }
    }
    for k in 0..n_c {
        for sign in [1.0, -1.0] {
            let mut g = vec![0.0; n];
            g[k] = sign;
            g_rows.push(g);
            h.push(1.0);
        }
    }
    for k in 0..n_c {
        let limit = w.du_max * grid.dt(k) / u_max;
        for sign in [1.0, -1.0] {
            let mut g = vec![0.0; n];
            g[k] = sign;
            let mut bound = limit;
            if k == 0 {
                bound += sign * inp.c_prev / u_max;
            } else {
                g[k - 1] = -sign;
            }
            g_rows.push(g);
            h.push(bound);
        }
    }
    for k in n_c..n {
        let mut g = vec![0.0; n];
        g[k] = -1.0;
        g_rows.push(g);
        h.push(0.0);
    }

    let m = g_rows.len();
    let g = DMatrix::from_fn(m, n, |i, j| g_rows[i][j]);
    let p = (&cost.p + cost.p.transpose()) * 0.5;
    Ok(AssembledQp { problem: QpProblem { p, q: cost.q, r: cost.r, g, h: DVector::from_vec(h) }, state_maps: maps, n_vars: n, u_max })
}

/// Diagnostics of one controller step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub delta: f64,
    /// Applied total front force per tire `K^0 x + c_0` (N).
    pub u_star: f64,
    pub solution: Option<ControlSolution>,
    pub tube: TubeBounds,
    pub avoidance_weights: bool,
    /// Prediction models of this step, empty if linearization failed.
    pub models: Vec<StepModel>,
    pub gains: Option<GainSchedule>,
    /// Closed-loop error transitions used for tightening.
    pub transitions: Vec<Mat5>,
    pub qp: Option<QpProblem>,
    pub setup_time: Duration,
    pub fallback: Option<Error>,
}

impl StepReport {
    /// First-step model, kept for one-step prediction residuals.
    pub fn first_model(&self) -> Option<&StepModel> {
        self.models.first()
    }

    /// Tightening setup plus QP wall time.
    pub fn solve_time(&self) -> Duration {
        self.setup_time + self.solution.as_ref().map_or(Duration::ZERO, |s| s.solve_time)
    }
}

#[derive(Debug, Clone, Default)]
struct StepTrace {
    models: Vec<StepModel>,
    gains: Option<GainSchedule>,
    transitions: Vec<Mat5>,
}

#[derive(Debug, Clone)]
pub struct Controller {
    pub config: ControllerConfig,
    previous: Option<Vec<Vec5>>,
    previous_c: Vec<f64>,
    c_applied: f64,
    delta: f64,
    gains: Option<GainSchedule>,
}

impl Controller {
    pub fn new(config: ControllerConfig) -> Result<Self> {
        config.params.validate()?;
        config.grid.validate()?;
        config.avoidance.validate()?;
        config.tracking.validate()?;
        config.disturbance.validate()?;
        let n_c = config.grid.n_control;
        Ok(Self { config, previous: None, previous_c: vec![0.0; n_c], c_applied: 0.0, delta: 0.0, gains: None })
    }

    /// Seeds the held steering angle used when a step falls back.
    pub fn with_initial_steering(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn previous_states(&self) -> Option<&[Vec5]> {
        self.previous.as_deref()
    }

    fn obstacle_in_horizon(&self, s: f64, ctx: &StepContext<'_>) -> bool {
        let reach = s + ctx.x_dot_p * self.config.grid.horizon();
        let rear = s - self.config.params.b;
        ctx.obstacles.iter().any(|o| o.s_end >= rear && o.s_start <= reach)
    }

    pub fn control_step(&mut self, measurement: &ErrorState, ctx: &StepContext<'_>) -> StepReport {
        match self.try_step(measurement, ctx) {
            Ok(report) => report,
            Err((err, tube, setup_time, trace, qp)) => StepReport {
                delta: self.delta,
                u_star: f64::NAN,
                solution: None,
                tube,
                avoidance_weights: self.obstacle_in_horizon(measurement.s_d, ctx),
                models: trace.models,
                gains: trace.gains,
                transitions: trace.transitions,
                qp,
                setup_time,
                fallback: Some(err),
            },
        }
    }

    #[allow(clippy::type_complexity)]
    fn try_step(
        &mut self,
        meas: &ErrorState,
        ctx: &StepContext<'_>,
    ) -> std::result::Result<StepReport, (Error, TubeBounds, Duration, StepTrace, Option<QpProblem>)> {
        let fail = |e: Error| (e, TubeBounds::default(), Duration::ZERO, StepTrace::default(), None);
        let cfg = &self.config;
        let params = &cfg.params;
        let grid = &cfg.grid;
        let (n_c, n_p) = (grid.n_control, grid.n_pred());
        let x_dot = ctx.x_dot_p;
        if !(x_dot > 0.0) {
            return Err(fail(Error::NonPositiveSpeed(x_dot)));
        }

        let setup_start = Instant::now();
        let models =
            build_prediction_models(meas, self.previous.as_deref(), ctx.path, params, grid, x_dot).map_err(fail)?;
        let avoid = self.obstacle_in_horizon(meas.s_d, ctx);
        let weights = if avoid { cfg.avoidance } else { cfg.tracking };
        let (q_lqr, r_lqr) = weights.lqr_weights(params, x_dot);
        let gains = compute_lqr_gains(&models, grid, &q_lqr, r_lqr, self.gains.as_ref()).map_err(|e| {
            let trace = StepTrace { models: models.clone(), ..StepTrace::default() };
            (e, TubeBounds::default(), Duration::ZERO, trace, None)
        })?;
        let phis = error_transition(&models, &gains).map_err(fail)?;
        let trace = StepTrace { models: models.clone(), gains: Some(gains.clone()), transitions: phis.clone() };

        // path distance guesses from the current models with last step's inputs
        let x0 = meas.to_vector();
        let mut s_pred = Vec::with_capacity(n_p + 1);
        let mut x = x0;
        s_pred.push(x[4]);
        for i in 0..n_p {
            let c = self.previous_c[(i + 1).min(n_c - 1)];
            x = phis[i] * x + models[i].b_d * c + models[i].l_d;
            s_pred.push(x[4]);
        }
        let e_phi_prev: Vec<f64> = match &self.previous {
            Some(states) => crate::tube::shifted_component(states, 2, n_p + 1),
            None => vec![meas.e_phi; n_p + 1],
        };
        let stretched = stretch_obstacles(ctx.obstacles, meas.s_d, x_dot, grid);
        let corridor = build_active_constraints(&stretched, ctx.road);
        let w = match cfg.mode {
            Mode::Rmpc => cfg.disturbance,
            Mode::Dmpc => DisturbanceSet::zero(),
        };
        let tube = build_tube(&corridor, &s_pred, &e_phi_prev, &phis, &w, n_c, params).map_err(fail)?;
        let stab = assemble_stab_constraints(params, x_dot);
        let setup_time = setup_start.elapsed();

        let fail_late = |e: Error, qp: Option<QpProblem>| (e, tube.clone(), setup_time, trace.clone(), qp);
        let assembled = assemble_qp(&QpInputs {
            models: &models,
            gains: &gains,
            tube: &tube,
            stab: &stab,
            weights: &weights,
            params,
            grid,
            x0,
            c_prev: self.c_applied,
            x_dot_p: x_dot,
        })
        .map_err(|e| fail_late(e, None))?;
        let qp_start = Instant::now();
        let sol = solve_qp(&assembled.problem, &cfg.qp).map_err(|e| fail_late(e, Some(assembled.problem.clone())))?;
        let solve_time = qp_start.elapsed();

        let u_max = assembled.u_max;
        let c: Vec<f64> = (0..n_c).map(|k| sol.z[k] * u_max).collect();
        let mut states = Vec::with_capacity(n_p + 1);
        let mut inputs = Vec::with_capacity(n_p);
        let mut x = x0;
        states.push(x);
        for i in 0..n_p {
            let m = &models[i];
            let u = (gains.gain5(i) * x)[0] + c[i.min(n_c - 1)];
            inputs.push(u);
            x = m.step(&x, u);
            states.push(x);
        }
        let eps_stab = [sol.z[n_c], sol.z[n_c + 1], sol.z[n_c + 2], sol.z[n_c + 3]];
        let solution = ControlSolution {
            c: c.clone(),
            states: states.clone(),
            inputs: inputs.clone(),
            eps_stab,
            eps_coll: sol.z[n_c + ENVELOPE_ROWS],
            objective: sol.objective,
            iterations: sol.iterations,
            residuals: sol.residuals,
            solve_time,
        };

        let u_star = inputs[0];
        let delta = steering_from_force(u_star, meas, params, x_dot, cfg.steer_limit);
        if !delta.is_finite() {
            return Err(fail_late(Error::NonFinite("steering command"), Some(assembled.problem)));
        }

        self.previous = Some(states);
        self.previous_c = c.clone();
        self.c_applied = c[0];
        self.delta = delta;
        self.gains = Some(gains);
        Ok(StepReport {
            delta,
            u_star,
            solution: Some(solution),
            tube,
            avoidance_weights: avoid,
            models: trace.models,
            gains: trace.gains,
            transitions: trace.transitions,
            qp: Some(assembled.problem),
            setup_time,
            fallback: None,
        })
    }
}

/// Steering angle that makes the front tire produce `force` at the current state.
pub fn steering_from_force(force: f64, meas: &ErrorState, params: &VehicleParams, x_dot: f64, limit: f64) -> f64 {
    let p = params.cp_distance();
    let y_dot = meas.y_dot_p - p * meas.phi_dot;
    let alpha_f = inverse_tire_force(force, params.c_front, params.mu, params.fz_front);
    ((y_dot + params.a * meas.phi_dot) / x_dot - alpha_f).clamp(-limit, limit)
}
