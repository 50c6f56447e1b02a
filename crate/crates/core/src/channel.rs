//! Photometry and link budget of the LED-to-camera channel.
//!
//! Lambertian emission, luminous flux and transmitted power integrals,
//! line-of-sight DC gain, received power, pixel-domain Eb/N0, SNIR, Shannon
//! capacity of the camera channel, MIMO superposition and the analytic OOK
//! bit error rate.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CameraModel, Luminaire};

/// Photopic maximum spectral efficacy, lm/W.
pub const DEFAULT_K_M: f64 = 683.0;

/// Default number of angular quadrature intervals for [`transmitted_power`].
pub const DEFAULT_ANGULAR_STEPS: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("angle {0} deg outside the allowed domain {1}")]
    AngleOutOfRange(f64, &'static str),
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("spectral tables do not overlap the band [{0}, {1}] nm")]
    EmptyOverlap(f64, f64),
    #[error("invalid spectral configuration: {0}")]
    BadSpectrum(&'static str),
    #[error("gain and symbol lists differ in length ({gains} vs {symbols})")]
    LengthMismatch { gains: usize, symbols: usize },
    #[error("SNIR must be non-negative, got {0}")]
    NegativeSnir(f64),
}

/// Tabulated spectral description of an emitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    pub lambda_min_nm: f64,
    pub lambda_max_nm: f64,
    /// (wavelength nm, V(lambda)) samples, sorted by wavelength.
    pub luminosity_curve: Vec<(f64, f64)>,
    pub k_m: f64,
    /// (wavelength nm, W/nm) samples, sorted by wavelength.
    pub spectral_flux: Vec<(f64, f64)>,
}

impl SpectralConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.lambda_min_nm < self.lambda_max_nm) {
            return Err(ChannelError::BadSpectrum("lambda_min_nm must be below lambda_max_nm"));
        }
        if self.luminosity_curve.is_empty() || self.spectral_flux.is_empty() {
            return Err(ChannelError::BadSpectrum("empty table"));
        }
        if self
            .luminosity_curve
            .iter()
            .any(|&(_, v)| !(0.0..=1.0).contains(&v))
        {
            return Err(ChannelError::BadSpectrum("luminosity samples must lie in [0, 1]"));
        }
        let sorted = |t: &[(f64, f64)]| t.windows(2).all(|w| w[0].0 < w[1].0);
        if !sorted(&self.luminosity_curve) || !sorted(&self.spectral_flux) {
            return Err(ChannelError::BadSpectrum("tables must be strictly sorted by wavelength"));
        }
        Ok(())
    }
}

/// Piecewise-linear lookup; zero outside the tabulated range.
fn interpolate(table: &[(f64, f64)], x: f64) -> f64 {
    let (first, last) = (table[0], table[table.len() - 1]);
    if x < first.0 || x > last.0 {
        return 0.0;
    }
    if table.len() == 1 {
        return first.1;
    }
    let i = table.partition_point(|&(w, _)| w <= x).clamp(1, table.len() - 1);
    let (x0, y0) = table[i - 1];
    let (x1, y1) = table[i];
    if x1 == x0 {
        return y0;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Trapezoidal integral of `f` over the union of the tables' sample points
/// clipped to `[lo, hi]`.
fn integrate_band<F: Fn(f64) -> f64>(
    tables: &[&[(f64, f64)]],
    lo: f64,
    hi: f64,
    f: F,
) -> Result<f64, ChannelError> {
    let start = tables.iter().map(|t| t[0].0).fold(lo, f64::max);
    let end = tables.iter().map(|t| t[t.len() - 1].0).fold(hi, f64::min);
    if !(start < end) {
        return Err(ChannelError::EmptyOverlap(lo, hi));
    }
    let mut grid: Vec<f64> = tables
        .iter()
        .flat_map(|t| t.iter().map(|&(w, _)| w))
        .filter(|&w| w > start && w < end)
        .collect();
    grid.push(start);
    grid.push(end);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Ok(grid
        .windows(2)
        .map(|w| 0.5 * (w[1] - w[0]) * (f(w[0]) + f(w[1])))
        .sum())
}

/// Luminous flux in lumens: `K_m * integral of V(l) * phi_e(l) dl`.
pub fn luminous_flux(spectral: &SpectralConfig) -> Result<f64, ChannelError> {
    spectral.validate()?;
    let v = &spectral.luminosity_curve;
    let phi = &spectral.spectral_flux;
    let integral = integrate_band(
        &[v.as_slice(), phi.as_slice()],
        spectral.lambda_min_nm,
        spectral.lambda_max_nm,
        |l| interpolate(v, l) * interpolate(phi, l),
    )?;
    Ok(spectral.k_m * integral)
}

/// Angular dependence of the emitted flux density, over polar angle in [0, pi].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AngularProfile {
    Isotropic,
    /// `cos^m(theta)` in the forward hemisphere, nothing behind the fixture.
    Lambertian { order: f64 },
}

impl AngularProfile {
    fn weight(&self, theta: f64) -> f64 {
        match *self {
            AngularProfile::Isotropic => 1.0,
            AngularProfile::Lambertian { order } => {
                if theta >= PI / 2.0 {
                    0.0
                } else {
                    theta.cos().powf(order)
                }
            }
        }
    }
}

/// Transmitted optical power `2 pi * integral integral phi_e(l, theta) dtheta dl`.
///
/// `theta` runs over `[0, pi]` on `angular_steps` trapezoid intervals; the
/// wavelength integral uses the tabulated grid. The integrand is separable,
/// so the nested quadrature factorises into the product of the two 1-D rules.
pub fn transmitted_power(
    spectral: &SpectralConfig,
    angular: AngularProfile,
    angular_steps: usize,
) -> Result<f64, ChannelError> {
    spectral.validate()?;
    let phi = &spectral.spectral_flux;
    let spectral_part = integrate_band(
        &[phi.as_slice()],
        spectral.lambda_min_nm,
        spectral.lambda_max_nm,
        |l| interpolate(phi, l),
    )?;
    let n = angular_steps.max(1);
    let h = PI / n as f64;
    let angular_part: f64 = (0..n)
        .map(|i| {
            let (a, b) = (i as f64 * h, (i + 1) as f64 * h);
            0.5 * h * (angular.weight(a) + angular.weight(b))
        })
        .sum();
    Ok(2.0 * PI * angular_part * spectral_part)
}

/// Lambertian order `m = -ln 2 / ln(cos(theta_half))`.
pub fn lambertian_order(half_power_semi_angle_deg: f64) -> Result<f64, ChannelError> {
    if !(half_power_semi_angle_deg > 0.0 && half_power_semi_angle_deg < 90.0) {
        return Err(ChannelError::AngleOutOfRange(half_power_semi_angle_deg, "(0, 90)"));
    }
    Ok(-LN_2 / half_power_semi_angle_deg.to_radians().cos().ln())
}

fn order_of(luminaire: &Luminaire) -> Result<f64, ChannelError> {
    lambertian_order(luminaire.half_power_semi_angle_deg)
}

/// `I(phi) = I(0) cos^m(phi)`.
pub fn luminous_intensity(luminaire: &Luminaire, emission_angle_deg: f64) -> Result<f64, ChannelError> {
    if !(0.0..=90.0).contains(&emission_angle_deg) {
        return Err(ChannelError::AngleOutOfRange(emission_angle_deg, "[0, 90]"));
    }
    let m = order_of(luminaire)?;
    Ok(luminaire.center_intensity * emission_angle_deg.to_radians().cos().powf(m))
}

/// Link geometry: LED-to-camera distance plus emission and incidence angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub d_cm: f64,
    /// Emission angle at the fixture.
    pub phi_deg: f64,
    /// Incidence angle at the camera.
    pub theta_deg: f64,
}

/// Line-of-sight DC gain H(0); zero once the incidence angle reaches the
/// camera's FOV semi-angle.
pub fn channel_dc_gain(
    luminaire: &Luminaire,
    camera: &CameraModel,
    geometry: LinkGeometry,
) -> Result<f64, ChannelError> {
    if !(geometry.d_cm > 0.0) {
        return Err(ChannelError::NonPositiveDistance(geometry.d_cm));
    }
    let theta_c = camera.fov_semi_angle_deg();
    if geometry.theta_deg >= theta_c || geometry.theta_deg < 0.0 {
        return Ok(0.0);
    }
    let m = order_of(luminaire)?;
    let d_mm = geometry.d_cm * 10.0;
    let spread = (m + 1.0) * camera.aperture_area_mm2 / (2.0 * PI * d_mm * d_mm);
    Ok(spread
        * geometry.phi_deg.to_radians().cos().powf(m)
        * camera.optical_filter_gain
        * geometry.theta_deg.to_radians().cos())
}

/// Received optical power `I(0) cos^m(phi) cos(psi) / d^2`, with `d` in cm.
///
/// `psi` is the receiver-side incidence angle; light arriving at or beyond
/// 90 degrees contributes nothing.
pub fn received_power(luminaire: &Luminaire, geometry: LinkGeometry) -> Result<f64, ChannelError> {
    let d = geometry.d_cm;
    if !(d > 0.0) {
        return Err(ChannelError::NonPositiveDistance(d));
    }
    if geometry.theta_deg >= 90.0 {
        return Ok(0.0);
    }
    let intensity = luminous_intensity(luminaire, geometry.phi_deg)?;
    Ok(intensity * geometry.theta_deg.to_radians().cos() / (d * d))
}

/// Camera sensor noise fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorNoiseModel {
    pub alpha: f64,
    pub beta: f64,
    /// Exposure as a fraction of the signal cycle, in (0, 1].
    pub exposure_ratio: f64,
    pub signal_amplitude: f64,
}

/// Pixel-domain Eb/N0 `s^2 D / (alpha s D + beta)`.
pub fn pixel_ebn0(noise: &SensorNoiseModel) -> f64 {
    let (s, delta) = (noise.signal_amplitude, noise.exposure_ratio);
    s * s * delta / (noise.alpha * s * delta + noise.beta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkState {
    pub p_avg: f64,
    /// Distortion factor in [0, 1]; 1 means the LED images straight onto the lens.
    pub sigma: f64,
    pub sigma_n2: f64,
    /// Spatial bandwidth, i.e. number of parallel pixel channels.
    pub w_s: f64,
}

/// `sigma P^2 / ((1 - sigma) P^2 + sigma_n^2)`.
pub fn snir(link: &LinkState) -> f64 {
    let p2 = link.p_avg * link.p_avg;
    link.sigma * p2 / ((1.0 - link.sigma) * p2 + link.sigma_n2)
}

/// Shannon capacity of the camera channel in bit/s.
pub fn channel_capacity(camera: &CameraModel, link: &LinkState) -> f64 {
    camera.frame_rate_fps * link.w_s * (1.0 + snir(link)).log2()
}

/// `R * sum(h_i x_i) + N`.
pub fn mimo_output(
    gains: &[f64],
    symbols: &[f64],
    responsivity: f64,
    noise_sample: f64,
) -> Result<f64, ChannelError> {
    if gains.len() != symbols.len() {
        return Err(ChannelError::LengthMismatch {
            gains: gains.len(),
            symbols: symbols.len(),
        });
    }
    let dot: f64 = gains.iter().zip(symbols).map(|(h, x)| h * x).sum();
    Ok(responsivity * dot + noise_sample)
}

/// Gaussian tail probability Q(x).
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Analytic OOK bit error rate on an AWGN channel, `Q(sqrt(SNIR))`.
pub fn ook_ber_theoretical(snir: f64) -> Result<f64, ChannelError> {
    if !(snir >= 0.0) {
        return Err(ChannelError::NegativeSnir(snir));
    }
    Ok(q_function(snir.sqrt()))
}
