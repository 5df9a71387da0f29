use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::{ControllerConfig, Mode, QpWeights};
use crate::error::{Error, Result};
use crate::ltv::TimeGrid;
use crate::path::{ReferencePath, RoadBounds, RoadSection, Segment};
use crate::qp::QpSettings;
use crate::tube::{DisturbanceSet, Obstacle};
use crate::vehicle::VehicleParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathConfig {
    /// Global `(x, y, heading)` of `s_d = 0`.
    #[serde(default)]
    pub start: [f64; 3],
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleConfig {
    pub s_start: f64,
    pub s_end: f64,
    pub e_y_right: f64,
    pub e_y_left: f64,
    /// Time (s) at which the obstacle is first perceived.
    #[serde(default)]
    pub appear_at: f64,
}

impl ObstacleConfig {
    pub fn obstacle(&self) -> Result<Obstacle> {
        Obstacle::new(self.s_start, self.s_end, self.e_y_right, self.e_y_left)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConfig {
    pub s_d: f64,
    pub e_y: f64,
    pub e_phi: f64,
    /// Start in the steady turn of the local path curvature.
    pub steady: bool,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self { s_d: 0.0, e_y: 0.0, e_phi: 0.0, steady: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub enabled: bool,
    /// Sensor noise half-width as a fraction of the disturbance set.
    pub fraction: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { enabled: false, fraction: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantDisturbanceConfig {
    pub enabled: bool,
    /// Fraction of the disturbance set injected once per controller period.
    pub fraction: f64,
}

impl Default for PlantDisturbanceConfig {
    fn default() -> Self {
        Self { enabled: false, fraction: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSets {
    pub avoidance: QpWeights,
    pub tracking: QpWeights,
}

impl Default for WeightSets {
    fn default() -> Self {
        Self { avoidance: QpWeights::avoidance(), tracking: QpWeights::tracking() }
    }
}

fn default_substep() -> f64 {
    0.001
}
fn default_steer_limit() -> f64 {
    30.0
}
fn default_qp_iterations() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Simulated time (s).
    pub duration: f64,
    /// Constant longitudinal speed (m/s).
    pub speed: f64,
    #[serde(default)]
    pub mode: Mode,
    /// Vehicle parameters; `mu` is the controller's friction estimate.
    #[serde(default)]
    pub vehicle: VehicleParams,
    /// Plant friction; defaults to the controller's.
    #[serde(default)]
    pub mu_plant: Option<f64>,
    pub path: PathConfig,
    pub road: Vec<RoadSection>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleConfig>,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub grid: TimeGrid,
    #[serde(default)]
    pub disturbance: DisturbanceSet,
    #[serde(default)]
    pub weights: WeightSets,
    /// Plant integration step (s).
    #[serde(default = "default_substep")]
    pub substep: f64,
    #[serde(default = "default_steer_limit")]
    pub steer_limit_deg: f64,
    #[serde(default = "default_qp_iterations")]
    pub qp_max_iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub plant_disturbance: PlantDisturbanceConfig,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn mu_plant(&self) -> f64 {
        self.mu_plant.unwrap_or(self.vehicle.mu)
    }

    /// Number of controller steps in a full-length run.
    pub fn n_steps(&self) -> usize {
        (self.duration / self.grid.t_short + 1e-9).floor() as usize
    }

    /// Plant substeps per controller period.
    pub fn substeps(&self) -> usize {
        (self.grid.t_short / self.substep).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Config(format!("duration must be positive, got {}", self.duration)));
        }
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return Err(Error::Config(format!("speed must be positive, got {}", self.speed)));
        }
        self.vehicle.validate()?;
        self.grid.validate()?;
        self.disturbance.validate()?;
        self.weights.avoidance.validate()?;
        self.weights.tracking.validate()?;
        if !(self.mu_plant() > 0.0) {
            return Err(Error::Config("plant friction must be positive".into()));
        }
        let ratio = self.grid.t_short / self.substep;
        if !(self.substep > 0.0) || (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(Error::Config(format!(
                "substep {} must divide the controller period {}",
                self.substep, self.grid.t_short
            )));
        }
        if !(self.steer_limit_deg > 0.0) || self.qp_max_iterations == 0 {
            return Err(Error::Config("steering limit and qp iteration cap must be positive".into()));
        }
        for o in &self.obstacles {
            o.obstacle()?;
            if !(o.appear_at >= 0.0) {
                return Err(Error::Config(format!("obstacle appearance time {} is negative", o.appear_at)));
            }
        }
        self.reference_path()?;
        self.road_bounds()?;
        Ok(())
    }

    pub fn reference_path(&self) -> Result<ReferencePath> {
        let [x, y, h] = self.path.start;
        ReferencePath::new((x, y, h), self.path.segments.clone())
    }

    pub fn road_bounds(&self) -> Result<RoadBounds> {
        RoadBounds::new(self.road.clone())
    }

    pub fn controller_config(&self) -> ControllerConfig {
        ControllerConfig {
            params: self.vehicle,
            grid: self.grid,
            avoidance: self.weights.avoidance,
            tracking: self.weights.tracking,
            disturbance: self.disturbance,
            mode: self.mode,
            steer_limit: self.steer_limit_deg.to_radians(),
            qp: QpSettings { max_iterations: self.qp_max_iterations, ..QpSettings::default() },
        }
    }
}
