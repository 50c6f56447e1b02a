//! Scenario-driven experiments and their file outputs.

pub mod output;
pub mod run;
pub mod scenario;

pub use output::*;
pub use run::*;
pub use scenario::*;
