//! Robust tube model predictive steering control for emergency obstacle
//! avoidance, with a nonlinear single-track plant and a closed-loop harness.

pub mod controller;
pub mod envelope;
pub mod error;
pub mod expm;
pub mod lp;
pub mod lqr;
pub mod ltv;
pub mod path;
pub mod qp;
pub mod sim;
pub mod tube;
pub mod vehicle;

pub use controller::{
    assemble_qp, steering_from_force, ControlSolution, Controller, ControllerConfig, Mode, QpWeights, StepContext,
    StepReport,
};
pub use envelope::{assemble_stab_constraints, yaw_rate_bound, StabConstraints};
pub use error::{Error, Result};
pub use lqr::{compute_lqr_gains, GainSchedule};
pub use ltv::{build_prediction_models, discretize_zoh, StepModel, TimeGrid};
pub use path::{ReferencePath, RoadBounds, RoadSection, Segment};
pub use qp::{solve_qp, KktResiduals, QpProblem, QpSettings, QpSolution};
pub use sim::{run_scenario, ScenarioConfig};
pub use tube::{DisturbanceSet, Obstacle, TubeBounds};
pub use vehicle::{
    brush_tire_force, inverse_tire_force, tire_saturation_angle, ErrorState, GlobalState, PlantState, VehicleParams,
};
