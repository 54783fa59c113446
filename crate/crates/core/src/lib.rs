//! Numerical core for a two-phase age-structured population model.

pub mod bisect;
pub mod error;
pub mod grid;
pub mod ode_model;
pub mod params;
pub mod pde_full;
pub mod pde_ode;
pub mod spectral;
pub mod state;

pub use error::{CoreError, Result};
pub use grid::{AgeFunction, AgeGrid};
pub use params::{Competition, ModelParams};
pub use state::PopulationState;
