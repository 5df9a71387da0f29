use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controller::{Controller, StepContext, StepReport};
use crate::error::{Error, Result};
use crate::path::{ReferencePath, RoadBounds};
use crate::sim::footprint::clearance;
use crate::sim::scenario::ScenarioConfig;
use crate::tube::Obstacle;
use crate::vehicle::{
    cp_lateral_velocity, plant_derivative, rk4_step, steady_cornering, ErrorState, GlobalState, PlantState,
    VehicleParams,
};

/// One logged controller step; field order matches the CSV schema.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LogRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub phi: f64,
    pub ydot_p: f64,
    pub phidot: f64,
    pub e_phi: f64,
    pub e_y: f64,
    pub s_d: f64,
    pub delta: f64,
    pub u_star: f64,
    pub c0: f64,
    pub eps_coll: f64,
    pub eps_stab: [f64; 4],
    pub ey_min_0: f64,
    pub ey_max_0: f64,
    pub h_nc: f64,
    pub ay: f64,
    pub solve_ms: f64,
}

impl LogRow {
    pub fn error_state(&self) -> ErrorState {
        ErrorState { y_dot_p: self.ydot_p, phi_dot: self.phidot, e_phi: self.e_phi, e_y: self.e_y, s_d: self.s_d }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Completed,
    Collision { t: f64 },
    PlantFailure(String),
    ControllerFailure(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub rows: Vec<LogRow>,
    pub termination: Termination,
    /// Minimum footprint clearance over every plant substep.
    pub min_clearance: f64,
    /// Tightening plus QP wall time per controller step (ms).
    pub solve_times_ms: Vec<f64>,
    pub fallback_steps: usize,
    pub max_kkt_residual: f64,
}

impl RunLog {
    pub fn collided(&self) -> bool {
        matches!(self.termination, Termination::Collision { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Write measured solve times into the log rows.
    pub timing_in_log: bool,
    /// Consecutive fallback steps treated as a controller failure.
    pub max_consecutive_fallbacks: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { timing_in_log: false, max_consecutive_fallbacks: 10 }
    }
}

/// Everything about one controller step, handed to run observers.
pub struct StepRecord<'a> {
    pub k: usize,
    pub t: f64,
    pub plant: &'a PlantState,
    pub measurement: &'a ErrorState,
    pub perceived: &'a [Obstacle],
    pub report: &'a StepReport,
    pub controller: &'a Controller,
}

/// Plant state for the scenario's initial condition and the steering that holds it.
pub fn initial_state(cfg: &ScenarioConfig, path: &ReferencePath) -> Result<(PlantState, f64)> {
    let init = cfg.initial;
    let (y_dot, phi_dot, delta, e_phi0) = if init.steady {
        let kappa = path.curvature_at(init.s_d);
        let sc = steady_cornering(&cfg.vehicle, cfg.mu_plant(), cfg.speed, kappa)?;
        (sc.y_dot, sc.phi_dot, sc.delta, sc.e_phi)
    } else {
        (0.0, 0.0, 0.0, 0.0)
    };
    let e_phi = e_phi0 + init.e_phi;
    let pose = path.path_to_global(init.e_y, e_phi, init.s_d);
    Ok((
        PlantState {
            global: GlobalState { y_dot, x_dot: cfg.speed, phi_dot, ..pose },
            e_phi,
            e_y: init.e_y,
            s_d: init.s_d,
        },
        delta,
    ))
}

pub fn lateral_acceleration(state: &PlantState, delta: f64, params: &VehicleParams, mu: f64, path: &ReferencePath) -> f64 {
    plant_derivative(state, delta, params, mu, path)
        .map(|d| d.global.y_dot + state.global.x_dot * state.global.phi_dot)
        .unwrap_or(f64::NAN)
}

fn uniform_box(rng: &mut ChaCha8Rng, half: &[f64; 5], fraction: f64) -> [f64; 5] {
    half.map(|w| if w > 0.0 { rng.gen_range(-1.0..=1.0) * w * fraction } else { 0.0 })
}

fn perturb_plant(state: &PlantState, w: &[f64; 5], params: &VehicleParams, path: &ReferencePath) -> PlantState {
    let p = params.cp_distance();
    let phi_dot = state.global.phi_dot + w[1];
    let y_dot_p = cp_lateral_velocity(state.global.y_dot, state.global.phi_dot, p) + w[0];
    let e_phi = state.e_phi + w[2];
    let e_y = state.e_y + w[3];
    let s_d = state.s_d + w[4];
    let pose = path.path_to_global(e_y, e_phi, s_d);
    PlantState {
        global: GlobalState { y_dot: y_dot_p - p * phi_dot, phi_dot, x_dot: state.global.x_dot, ..pose },
        e_phi,
        e_y,
        s_d,
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunLog> {
    run_scenario_with(cfg, &RunOptions::default(), |_| {})
}

pub fn run_scenario_with(
    cfg: &ScenarioConfig,
    options: &RunOptions,
    mut observer: impl FnMut(&StepRecord<'_>),
) -> Result<RunLog> {
    cfg.validate()?;
    let path = cfg.reference_path()?;
    let road: RoadBounds = cfg.road_bounds()?;
    let obstacles: Vec<(Obstacle, f64)> =
        cfg.obstacles.iter().map(|o| o.obstacle().map(|ob| (ob, o.appear_at))).collect::<Result<_>>()?;
    let physical: Vec<Obstacle> = obstacles.iter().map(|(o, _)| *o).collect();
    let params = cfg.vehicle;
    let mu_plant = cfg.mu_plant();
    let t_s = cfg.grid.t_short;
    let n_sub = cfg.substeps();
    let h = t_s / n_sub as f64;

    let (mut plant, delta0) = initial_state(cfg, &path)?;
    let mut controller = Controller::new(cfg.controller_config())?.with_initial_steering(delta0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut rows = Vec::with_capacity(cfg.n_steps() + 1);
    let mut solve_times = Vec::with_capacity(cfg.n_steps());
    let mut min_clearance = clearance(plant.s_d, plant.e_y, plant.e_phi, &params, &physical);
    let mut fallback_steps = 0;
    let mut consecutive = 0;
    let mut max_kkt = 0.0f64;
    let mut termination = Termination::Completed;

    'outer: for k in 0..cfg.n_steps() {
        let t = k as f64 * t_s;
        if cfg.plant_disturbance.enabled && k > 0 {
            let w = uniform_box(&mut rng, &cfg.disturbance.half_widths, cfg.plant_disturbance.fraction);
            plant = perturb_plant(&plant, &w, &params, &path);
        }
        let mut meas = plant.error_state(&params);
        if cfg.noise.enabled {
            let n = uniform_box(&mut rng, &cfg.disturbance.half_widths, cfg.noise.fraction);
            meas = ErrorState::from_vector(&(meas.to_vector() + nalgebra::Vector5::from(n)));
        }
        let perceived: Vec<Obstacle> =
            obstacles.iter().filter(|(_, at)| *at <= t + 1e-9).map(|(o, _)| *o).collect();
        let ctx = StepContext { path: &path, road: &road, obstacles: &perceived, x_dot_p: cfg.speed };
        let report = controller.control_step(&meas, &ctx);
        observer(&StepRecord {
            k,
            t,
            plant: &plant,
            measurement: &meas,
            perceived: &perceived,
            report: &report,
            controller: &controller,
        });

        let solve_ms = report.solve_time().as_secs_f64() * 1e3;
        solve_times.push(solve_ms);
        if let Some(sol) = &report.solution {
            max_kkt = max_kkt.max(sol.residuals.max());
        }
        if report.fallback.is_some() {
            fallback_steps += 1;
            consecutive += 1;
        } else {
            consecutive = 0;
        }
        let delta = report.delta;
        let row = make_row(t, &plant, delta, &report, &params, mu_plant, &path, cfg, if options.timing_in_log { solve_ms } else { 0.0 });
        rows.push(row);
        if consecutive >= options.max_consecutive_fallbacks {
            let reason = report.fallback.as_ref().map_or_else(String::new, |e| e.to_string());
            termination = Termination::ControllerFailure(reason);
            break;
        }

        for j in 0..n_sub {
            match rk4_step(&plant, delta, &params, mu_plant, &path, h) {
                Ok(next) => plant = next,
                Err(e) => {
                    termination = Termination::PlantFailure(e.to_string());
                    break 'outer;
                }
            }
            let c = clearance(plant.s_d, plant.e_y, plant.e_phi, &params, &physical);
            min_clearance = min_clearance.min(c);
            if c < 0.0 {
                let tc = t + (j + 1) as f64 * h;
                let mut last = make_row(tc, &plant, delta, &report, &params, mu_plant, &path, cfg, 0.0);
                last.solve_ms = 0.0;
                rows.push(last);
                termination = Termination::Collision { t: tc };
                break 'outer;
            }
        }
    }

    Ok(RunLog { rows, termination, min_clearance, solve_times_ms: solve_times, fallback_steps, max_kkt_residual: max_kkt })
}

#[allow(clippy::too_many_arguments)]
fn make_row(
    t: f64,
    plant: &PlantState,
    delta: f64,
    report: &StepReport,
    params: &VehicleParams,
    mu_plant: f64,
    path: &ReferencePath,
    cfg: &ScenarioConfig,
    solve_ms: f64,
) -> LogRow {
    let e = plant.error_state(params);
    let (c0, eps_coll, eps_stab) = match &report.solution {
        Some(s) => (s.c[0], s.eps_coll, s.eps_stab),
        None => (f64::NAN, f64::NAN, [f64::NAN; 4]),
    };
    let (ey_min_0, ey_max_0) = report.tube.bounds.first().copied().unwrap_or((f64::NAN, f64::NAN));
    let h_nc = report.tube.margins.get(cfg.grid.n_control).map_or(f64::NAN, |m| m[1]);
    LogRow {
        t,
        x: plant.global.x,
        y: plant.global.y,
        phi: plant.global.phi,
        ydot_p: e.y_dot_p,
        phidot: e.phi_dot,
        e_phi: e.e_phi,
        e_y: e.e_y,
        s_d: e.s_d,
        delta,
        u_star: report.u_star,
        c0,
        eps_coll,
        eps_stab,
        ey_min_0,
        ey_max_0,
        h_nc,
        ay: lateral_acceleration(plant, delta, params, mu_plant, path),
        solve_ms,
    }
}

/// Fails with a configuration error when a run cannot start at all.
pub fn check_runnable(cfg: &ScenarioConfig) -> Result<()> {
    cfg.validate()?;
    let path = cfg.reference_path()?;
    initial_state(cfg, &path).map(|_| ()).map_err(|e| Error::Config(format!("initial state: {e}")))
}
