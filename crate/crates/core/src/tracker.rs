//! Constant-velocity Kalman filter over horizontal position.
//!
//! State is `[x, y, vx, vy]` in cm and cm/s; only `(x, y)` is observed.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Velocity variance (cm²/s²) assigned at cold start.
pub const COLD_START_VELOCITY_VARIANCE: f64 = 1e4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("{0} must be symmetric positive semi-definite")]
    NotPsd(&'static str),
    #[error("sampling interval must be finite and non-negative, got {0}")]
    BadInterval(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanConfig {
    pub transition: Matrix4<f64>,
    pub observation: Matrix2x4<f64>,
    pub process_noise: Matrix4<f64>,
    pub measurement_noise: Matrix2<f64>,
    pub dt_s: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self::constant_velocity(1.0, 1.0, 5.0).expect("defaults are valid")
    }
}

impl KalmanConfig {
    /// Constant-velocity model with white-acceleration process noise of
    /// intensity `q` (cm²/s⁴) and isotropic measurement noise `sigma_cm`.
    pub fn constant_velocity(dt_s: f64, q: f64, sigma_cm: f64) -> Result<Self, TrackerError> {
        if !(dt_s.is_finite() && dt_s >= 0.0) {
            return Err(TrackerError::BadInterval(dt_s));
        }
        let mut transition = Matrix4::identity();
        transition[(0, 2)] = dt_s;
        transition[(1, 3)] = dt_s;
        let d2 = dt_s * dt_s;
        let process_noise = Matrix4::from_diagonal(&Vector4::new(d2 * d2 / 4.0, d2 * d2 / 4.0, d2, d2)) * q;
        let cfg = Self {
            transition,
            observation: Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0),
            process_noise,
            measurement_noise: Matrix2::identity() * (sigma_cm * sigma_cm),
            dt_s,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TrackerError> {
        if !(self.dt_s.is_finite() && self.dt_s >= 0.0) {
            return Err(TrackerError::BadInterval(self.dt_s));
        }
        if !is_psd4(&self.process_noise) {
            return Err(TrackerError::NotPsd("process noise"));
        }
        let r = &self.measurement_noise;
        let symmetric = (r[(0, 1)] - r[(1, 0)]).abs() <= 1e-12 * (1.0 + r.abs().max());
        let psd = r[(0, 0)] >= 0.0 && r[(1, 1)] >= 0.0 && r.determinant() >= -1e-12;
        if !(symmetric && psd) {
            return Err(TrackerError::NotPsd("measurement noise"));
        }
        Ok(())
    }
}

fn is_psd4(m: &Matrix4<f64>) -> bool {
    let scale = 1.0 + m.abs().max();
    if (m - m.transpose()).abs().max() > 1e-12 * scale {
        return false;
    }
    m.symmetric_eigenvalues().min() >= -1e-9 * scale
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanState {
    pub x_vec: Vector4<f64>,
    pub p_cov: Matrix4<f64>,
}

impl KalmanState {
    /// Position from the first fix, zero velocity, position variance from R.
    pub fn cold_start(measurement: [f64; 2], config: &KalmanConfig) -> Self {
        let r = &config.measurement_noise;
        Self {
            x_vec: Vector4::new(measurement[0], measurement[1], 0.0, 0.0),
            p_cov: Matrix4::from_diagonal(&Vector4::new(
                r[(0, 0)],
                r[(1, 1)],
                COLD_START_VELOCITY_VARIANCE,
                COLD_START_VELOCITY_VARIANCE,
            )),
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x_vec[0], self.x_vec[1]]
    }

    pub fn velocity(&self) -> [f64; 2] {
        [self.x_vec[2], self.x_vec[3]]
    }
}

fn symmetrize(p: Matrix4<f64>) -> Matrix4<f64> {
    (p + p.transpose()) * 0.5
}

pub fn predict(state: &KalmanState, config: &KalmanConfig) -> KalmanState {
    let b = &config.transition;
    KalmanState {
        x_vec: b * state.x_vec,
        p_cov: symmetrize(b * state.p_cov * b.transpose() + config.process_noise),
    }
}

pub fn gain(predicted: &KalmanState, config: &KalmanConfig) -> Result<Matrix4x2<f64>, TrackerError> {
    let h = &config.observation;
    let s = h * predicted.p_cov * h.transpose() + config.measurement_noise;
    let s_inv = s.try_inverse().ok_or(TrackerError::SingularInnovation)?;
    if !s_inv.iter().all(|v| v.is_finite()) {
        return Err(TrackerError::SingularInnovation);
    }
    Ok(predicted.p_cov * h.transpose() * s_inv)
}

pub fn update(
    predicted: &KalmanState,
    measurement: [f64; 2],
    config: &KalmanConfig,
) -> Result<KalmanState, TrackerError> {
    let k = gain(predicted, config)?;
    let h = &config.observation;
    let innovation = Vector2::from(measurement) - h * predicted.x_vec;
    Ok(KalmanState {
        x_vec: predicted.x_vec + k * innovation,
        p_cov: symmetrize((Matrix4::identity() - k * h) * predicted.p_cov),
    })
}

/// Runs predict/update over a uniformly sampled series. Without an initial
/// state the first measurement cold-starts the filter.
pub fn track(
    measurements: &[[f64; 2]],
    config: &KalmanConfig,
    initial: Option<KalmanState>,
) -> Result<Vec<KalmanState>, TrackerError> {
    let mut out = Vec::with_capacity(measurements.len());
    let mut iter = measurements.iter();
    let mut state = match initial {
        Some(s) => s,
        None => match iter.next() {
            Some(first) => {
                let s = KalmanState::cold_start(*first, config);
                out.push(s.clone());
                s
            }
            None => return Ok(out),
        },
    };
    for m in iter {
        state = update(&predict(&state, config), *m, config)?;
        out.push(state.clone());
    }
    Ok(out)
}
