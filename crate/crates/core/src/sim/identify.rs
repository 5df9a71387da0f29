//! Disturbance-set identification from one-step prediction residuals.

use std::path::Path;

use crate::error::{Error, Result};
use crate::ltv::{StepModel, Vec5};
use crate::sim::run::{run_scenario_with, RunOptions};
use crate::sim::scenario::ScenarioConfig;
use crate::tube::DisturbanceSet;

/// A measured transition together with the model that predicted it.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub x: Vec5,
    pub u: f64,
    pub model: StepModel,
    pub next: Vec5,
}

impl Transition {
    pub fn residual(&self) -> Vec5 {
        self.next - self.model.step(&self.x, self.u)
    }
}

/// Componentwise maximum absolute residual.
pub fn residual_bounds(transitions: &[Transition]) -> Result<[f64; 5]> {
    if transitions.is_empty() {
        return Err(Error::EmptyTrials);
    }
    let mut bound = [0.0f64; 5];
    for t in transitions {
        let r = t.residual();
        for (b, v) in bound.iter_mut().zip(r.iter()) {
            *b = b.max(v.abs());
        }
    }
    Ok(bound)
}

/// Runs one trial and pairs every solved step with the next measurement.
pub fn collect_transitions(cfg: &ScenarioConfig) -> Result<Vec<Transition>> {
    let mut pending: Option<(Vec5, f64, StepModel)> = None;
    let mut out = Vec::new();
    run_scenario_with(cfg, &RunOptions::default(), |rec| {
        let x = rec.measurement.to_vector();
        if let Some((x0, u, model)) = pending.take() {
            out.push(Transition { x: x0, u, model, next: x });
        }
        if rec.report.fallback.is_none() && rec.report.u_star.is_finite() {
            if let Some(model) = rec.report.first_model() {
                pending = Some((x, rec.report.u_star, model.clone()));
            }
        }
    })?;
    Ok(out)
}

/// Half-widths covering every trial's residuals plus a per-state sensor margin.
pub fn estimate_disturbance_set(trials: &[ScenarioConfig], sensor_margin: [f64; 5]) -> Result<DisturbanceSet> {
    if trials.is_empty() {
        return Err(Error::EmptyTrials);
    }
    let mut transitions = Vec::new();
    for cfg in trials {
        let mut quiet = cfg.clone();
        quiet.noise.enabled = false;
        transitions.extend(collect_transitions(&quiet)?);
    }
    let bound = residual_bounds(&transitions)?;
    let mut half_widths = [0.0; 5];
    for i in 0..5 {
        half_widths[i] = bound[i] + sensor_margin[i];
    }
    Ok(DisturbanceSet { half_widths })
}

/// Every `*.toml` scenario in `dir`, in file-name order.
pub fn load_trials(dir: impl AsRef<Path>) -> Result<Vec<ScenarioConfig>> {
    let dir = dir.as_ref();
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    files.iter().map(ScenarioConfig::load).collect()
}

/// A scenario-file fragment that sets the identified disturbance set.
pub fn disturbance_fragment(w: &DisturbanceSet) -> String {
    let values: Vec<String> = w.half_widths.iter().map(|v| v.to_string()).collect();
    format!("# [ydot_p, phidot, e_phi, e_y, s_d] half-widths\ndisturbance = [{}]\n", values.join(", "))
}
