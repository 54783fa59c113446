//! Scenario handling, reports and the verification suite behind the `agepde` binary.

pub mod error;
pub mod output;
pub mod scenario;
pub mod sweep;
pub mod verify;

pub use error::{CliError, Result};
pub use scenario::{load_scenario, LoadedScenario, ModelKind, Scenario};
