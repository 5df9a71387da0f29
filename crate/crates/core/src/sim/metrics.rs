use std::fmt;

use crate::envelope::assemble_stab_constraints;
use crate::sim::footprint::clearance;
use crate::sim::run::{LogRow, RunLog, Termination};
use crate::sim::scenario::ScenarioConfig;
use crate::tube::{f_width, Obstacle};
use crate::vehicle::VehicleParams;

/// Lateral error band that counts as back on the path (m).
pub const RETURN_BAND: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub steps: usize,
    pub collision: bool,
    pub termination: String,
    pub min_clearance: f64,
    pub max_abs_ey: f64,
    pub overshoot: f64,
    /// Path distance from the end of the last obstacle until `|e_y|` stays
    /// inside the return band; infinite when it never settles.
    pub return_distance: f64,
    pub road_excursion: f64,
    pub envelope_violation_fraction: f64,
    pub eps_stab_zero_fraction: f64,
    pub max_abs_ay: f64,
    pub solve_ms_p50: f64,
    pub solve_ms_p95: f64,
    pub solve_ms_max: f64,
    pub fallback_steps: usize,
    pub max_kkt_residual: f64,
}

impl Metrics {
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("steps", self.steps.to_string()),
            ("collision", self.collision.to_string()),
            ("termination", self.termination.clone()),
            ("min_clearance", self.min_clearance.to_string()),
            ("max_abs_ey", self.max_abs_ey.to_string()),
            ("overshoot", self.overshoot.to_string()),
            ("return_distance", self.return_distance.to_string()),
            ("road_excursion", self.road_excursion.to_string()),
            ("envelope_violation_fraction", self.envelope_violation_fraction.to_string()),
            ("eps_stab_zero_fraction", self.eps_stab_zero_fraction.to_string()),
            ("max_abs_ay", self.max_abs_ay.to_string()),
            ("solve_ms_p50", self.solve_ms_p50.to_string()),
            ("solve_ms_p95", self.solve_ms_p95.to_string()),
            ("solve_ms_max", self.solve_ms_max.to_string()),
            ("fallback_steps", self.fallback_steps.to_string()),
            ("max_kkt_residual", self.max_kkt_residual.to_string()),
        ]
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.entries() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

/// Nearest-rank percentile of unsorted samples.
pub fn percentile(samples: &[f64], pct: f64) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Largest `|e_y|` after the first zero crossing that follows the rear of
/// the vehicle passing `s_clear`.
pub fn overshoot(rows: &[LogRow], s_clear: f64, rear: f64) -> f64 {
    let Some(start) = rows.iter().position(|r| r.s_d - rear > s_clear) else { return 0.0 };
    let after = &rows[start..];
    let crossing = after.windows(2).position(|w| w[0].e_y == 0.0 || w[0].e_y.signum() != w[1].e_y.signum());
    match crossing {
        Some(i) => after[i + 1..].iter().map(|r| r.e_y.abs()).fold(0.0, f64::max),
        None => 0.0,
    }
}

pub fn return_distance(rows: &[LogRow], s_clear: f64) -> f64 {
    let Some(last) = rows.last() else { return f64::INFINITY };
    if last.e_y.abs() >= RETURN_BAND {
        return f64::INFINITY;
    }
    let settle = rows.iter().rposition(|r| r.e_y.abs() >= RETURN_BAND).map_or(0, |i| i + 1);
    (rows[settle].s_d - s_clear).max(0.0)
}

pub fn compute_metrics(log: &RunLog, cfg: Option<&ScenarioConfig>) -> Metrics {
    let rows = &log.rows;
    let params = cfg.map_or_else(VehicleParams::default, |c| c.vehicle);
    let obstacles: Vec<Obstacle> =
        cfg.map(|c| c.obstacles.iter().filter_map(|o| o.obstacle().ok()).collect()).unwrap_or_default();
    let s_clear = obstacles.iter().map(|o| o.s_end).fold(f64::NEG_INFINITY, f64::max);

    let envelope_violations = match cfg {
        Some(c) => {
            let env = assemble_stab_constraints(&c.vehicle, c.speed);
            rows.iter().filter(|r| !env.contains(&r.error_state().to_vector())).count()
        }
        None => 0,
    };
    let road_excursion = match cfg.and_then(|c| c.road_bounds().ok()) {
        Some(road) => rows
            .iter()
            .map(|r| {
                let (right, left) = road.at(r.s_d);
                let w = f_width(r.e_phi, &params);
                (r.e_y + w - left).max(right - (r.e_y - w)).max(0.0)
            })
            .fold(0.0, f64::max),
        None => 0.0,
    };
    let solved: Vec<&LogRow> = rows.iter().filter(|r| r.eps_stab.iter().all(|e| e.is_finite())).collect();
    let eps_zero = solved.iter().filter(|r| r.eps_stab.iter().all(|e| *e < 1e-6)).count();
    let row_clearance = rows
        .iter()
        .map(|r| clearance(r.s_d, r.e_y, r.e_phi, &params, &obstacles))
        .fold(f64::INFINITY, f64::min);

    Metrics {
        steps: rows.len(),
        collision: log.collided(),
        termination: match &log.termination {
            Termination::Completed => "completed".into(),
            Termination::Collision { t } => format!("collision at t = {t}"),
            Termination::PlantFailure(e) => format!("plant failure: {e}"),
            Termination::ControllerFailure(e) => format!("controller failure: {e}"),
        },
        min_clearance: log.min_clearance.min(row_clearance),
        max_abs_ey: rows.iter().map(|r| r.e_y.abs()).fold(0.0, f64::max),
        overshoot: if obstacles.is_empty() { 0.0 } else { overshoot(rows, s_clear, params.b) },
        return_distance: if obstacles.is_empty() { 0.0 } else { return_distance(rows, s_clear) },
        road_excursion,
        envelope_violation_fraction: if rows.is_empty() { 0.0 } else { envelope_violations as f64 / rows.len() as f64 },
        eps_stab_zero_fraction: if solved.is_empty() { 0.0 } else { eps_zero as f64 / solved.len() as f64 },
        max_abs_ay: rows.iter().map(|r| r.ay.abs()).fold(0.0, f64::max),
        solve_ms_p50: percentile(&log.solve_times_ms, 50.0),
        solve_ms_p95: percentile(&log.solve_times_ms, 95.0),
        solve_ms_max: log.solve_times_ms.iter().copied().fold(f64::NAN, f64::max),
        fallback_steps: log.fallback_steps,
        max_kkt_residual: log.max_kkt_residual,
    }
}

/// Rebuilds the parts of a run log that a CSV file preserves.
pub fn log_from_rows(rows: Vec<LogRow>, cfg: Option<&ScenarioConfig>) -> RunLog {
    let params = cfg.map_or_else(VehicleParams::default, |c| c.vehicle);
    let obstacles: Vec<Obstacle> =
        cfg.map(|c| c.obstacles.iter().filter_map(|o| o.obstacle().ok()).collect()).unwrap_or_default();
    let min_clearance =
        rows.iter().map(|r| clearance(r.s_d, r.e_y, r.e_phi, &params, &obstacles)).fold(f64::INFINITY, f64::min);
    let termination = match rows.iter().find(|r| clearance(r.s_d, r.e_y, r.e_phi, &params, &obstacles) < 0.0) {
        Some(r) => Termination::Collision { t: r.t },
        None => Termination::Completed,
    };
    let fallback_steps = rows.iter().filter(|r| !r.c0.is_finite()).count();
    RunLog {
        solve_times_ms: rows.iter().map(|r| r.solve_ms).collect(),
        rows,
        termination,
        min_clearance,
        fallback_steps,
        max_kkt_residual: f64::NAN,
    }
}
