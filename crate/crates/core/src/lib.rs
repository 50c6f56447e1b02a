//! Indoor positioning from ceiling LEDs seen by a phone camera.
//!
//! Each fixture broadcasts its own ceiling coordinates over on-off keying.
//! The camera reads that ID and estimates range from how many pixels the
//! fixture covers. A lighting server solves for position from three or more
//! ranges and smooths the track with a constant-velocity Kalman filter.
//!
//! [`sim`] runs the pipeline end to end against a simulated room. The
//! `occloc` binary in the companion CLI crate is built on it.

pub mod channel;
pub mod imaging;
pub mod model;
pub mod modem;
pub mod server;
pub mod sim;
pub mod solver;
pub mod tracker;

pub use imaging::{FeasibilityRegime, Observation, RangingConstant};
pub use model::{CameraModel, FixtureShape, Luminaire, Point3, Pose, RoomConfig};
pub use modem::LedIdFrame;
pub use server::{DetectionPacket, DetectionRecord, LedRegistry, LightingServer, ServerConfig};
pub use sim::Scenario;
pub use solver::{AnchorMeasurement, CircleFamily, PositionEstimate, SolverError};
pub use tracker::{KalmanConfig, KalmanState};
