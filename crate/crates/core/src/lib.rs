//! Deterministic quadcopter flight simulation.
//!
//! Rigid-body dynamics integrated with RK4, PIDA attitude/altitude control
//! tuned by a dual-simplex stochastic search, proportional-navigation
//! guidance towards a stereo-ranged target, and Lyapunov certification of
//! the hover-linearized closed loop.
//!
//! ```
//! use dronepida::{sim::simulate_step, Scenario};
//!
//! let mut sc = Scenario::step_default();
//! sc.duration = 3.0;
//! let trajectory = simulate_step(&sc).unwrap();
//! assert_eq!(trajectory.rows.len(), 3001);
//! ```

pub mod dynamics;
pub mod guidance;
pub mod linear;
pub mod metrics;
pub mod perception;
pub mod pida;
pub mod scenario;
pub mod sdsa;
pub mod sim;
pub mod tuning;

pub use dynamics::{ControlVector, Disturbance, DynamicsError, QuadParams, RigidBodyState};
pub use guidance::{GuidanceConfig, GuidanceMode};
pub use linear::{certify_closed_loop, linearize_hover, LinearError, LinearModel, StabilityReport};
pub use metrics::{step_response_metrics, StepMetrics, StepSpec};
pub use perception::{CameraRig, StereoObservation};
pub use pida::{Channel, Channels, GainSet, PidaController, PidaGains};
pub use scenario::{ConfigError, Scenario};
pub use sdsa::{minimize, Bounds, MinimizeResult, SdsaConfig};
pub use sim::{run_mission, run_step_response, RunReport, SimError, Trajectory};
pub use tuning::{tune, TuningResult};
