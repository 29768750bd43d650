//! Test harness for the throttle-by-wire simulator: scenario files, the
//! assembled simulation loop, trace recording, metric computation and
//! report evaluation.

pub mod metrics;
pub mod runner;
pub mod scenario;
pub mod sim;
pub mod trace;

pub use runner::{compute_metrics, evaluate, run_and_evaluate, run_fault_matrix, Report};
pub use scenario::{Assembly, Profile, Scenario};
pub use sim::{run_scenario, SimOutput};
