//! Fixtures shared by the controller benchmarks.

use rmpc_core::{Controller, ControllerConfig, ErrorState, Obstacle, ReferencePath, RoadBounds};

pub struct Fixture {
    pub path: ReferencePath,
    pub road: RoadBounds,
    pub obstacles: Vec<Obstacle>,
    pub measurement: ErrorState,
}

/// Curved road with an obstacle ahead, vehicle slightly off the path.
pub fn avoidance_fixture() -> Fixture {
    Fixture {
        path: ReferencePath::arc(400.0, 400.0),
        road: RoadBounds::uniform(-2.2, 5.4),
        obstacles: vec![Obstacle::new(40.0, 50.0, -0.9, 0.9).expect("valid obstacle")],
        measurement: ErrorState { y_dot_p: 0.05, phi_dot: 0.045, e_phi: 0.0, e_y: 0.1, s_d: 5.0 },
    }
}

pub fn controller() -> Controller {
    Controller::new(ControllerConfig::default()).expect("default controller config is valid")
}
