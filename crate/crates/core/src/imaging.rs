//! Photogrammetric ranging.
//!
//! A fixture of known area `S` imaged through a lens of focal length `f`
//! covers `eta = f^2 S / (rho^2 d^2)` pixels of edge `rho` at distance `d`
//! (far-field, `d - f ~ d`). Inverting gives `d = tau / sqrt(eta)` with the
//! per-(camera, fixture) constant `tau = f sqrt(S) / rho`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{incidence_angle, CameraModel, FixtureShape, Luminaire, Pose};

/// Pixel count at or above which ranging is fully reliable.
pub const FULL_PIXEL_THRESHOLD: f64 = 4.0;
/// Below one pixel the fixture cannot be ranged at all.
pub const MIN_PIXEL_THRESHOLD: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImagingError {
    #[error("object distance {d_mm} mm must exceed the focal length {f_mm} mm")]
    InsideFocalLength { d_mm: f64, f_mm: f64 },
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("pixel count must be positive, got {0}")]
    NonPositivePixels(f64),
    #[error("noise sigma must be finite and non-negative, got {0}")]
    BadNoise(f64),
}

/// Thin-lens image of a fixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub image_distance_mm: f64,
    pub magnification: f64,
    pub image_width_mm: f64,
    pub image_height_mm: f64,
    pub pixel_count: f64,
}

/// Thin-lens conjugate `e = f d / (d - f)`.
pub fn image_distance(f_mm: f64, d_mm: f64) -> Result<f64, ImagingError> {
    if !(d_mm > f_mm) {
        return Err(ImagingError::InsideFocalLength { d_mm, f_mm });
    }
    Ok(f_mm * d_mm / (d_mm - f_mm))
}

/// Exact thin-lens projection (no far-field approximation). Circular fixtures
/// are treated as the square of equal area.
pub fn project(camera: &CameraModel, luminaire: &Luminaire, d_mm: f64) -> Result<Projection, ImagingError> {
    let f = camera.focal_length_mm;
    let e = image_distance(f, d_mm)?;
    let magnification = f / (d_mm - f);
    let (a, b) = match luminaire.shape {
        FixtureShape::Rectangular {
            width_mm,
            height_mm,
        } => (width_mm, height_mm),
        FixtureShape::Circular { .. } => {
            let side = luminaire.area_mm2.sqrt();
            (side, side)
        }
    };
    let (ai, bi) = (magnification * a, magnification * b);
    let rho = camera.pixel_edge_mm;
    Ok(Projection {
        image_distance_mm: e,
        magnification,
        image_width_mm: ai,
        image_height_mm: bi,
        pixel_count: ai * bi / (rho * rho),
    })
}

/// Far-field pixel count `f^2 S / (rho^2 d^2)` at slant distance `d_cm`.
pub fn pixel_count(camera: &CameraModel, luminaire: &Luminaire, d_cm: f64) -> Result<f64, ImagingError> {
    if !(d_cm > 0.0) {
        return Err(ImagingError::NonPositiveDistance(d_cm));
    }
    let d_mm = d_cm * 10.0;
    let f = camera.focal_length_mm;
    if d_mm <= f {
        return Err(ImagingError::InsideFocalLength { d_mm, f_mm: f });
    }
    let rho = camera.pixel_edge_mm;
    Ok(f * f * luminaire.area_mm2 / (rho * rho * d_mm * d_mm))
}

/// `tau = f sqrt(S) / rho`, in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangingConstant {
    pub tau_mm: f64,
}

impl RangingConstant {
    pub fn new(camera: &CameraModel, luminaire: &Luminaire) -> Self {
        Self {
            tau_mm: camera.focal_length_mm * luminaire.area_mm2.sqrt() / camera.pixel_edge_mm,
        }
    }

    /// Distances (mm) where the fixture shrinks to 4 and to 1 pixel.
    pub fn regime_boundaries_mm(&self) -> (f64, f64) {
        (self.tau_mm / FULL_PIXEL_THRESHOLD.sqrt(), self.tau_mm / MIN_PIXEL_THRESHOLD.sqrt())
    }
}

/// `d = tau / sqrt(eta)`, in millimetres.
pub fn distance_from_pixels(tau: RangingConstant, eta: f64) -> Result<f64, ImagingError> {
    if !(eta > 0.0) {
        return Err(ImagingError::NonPositivePixels(eta));
    }
    Ok(tau.tau_mm / eta.sqrt())
}

pub fn visible(luminaire: &Luminaire, camera: &Pose, fov_full_angle_deg: f64) -> bool {
    match incidence_angle(luminaire, camera) {
        Ok(angle) => angle <= fov_full_angle_deg / 2.0,
        Err(_) => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeasibilityRegime {
    Full,
    Degraded,
    Impossible,
}

impl FeasibilityRegime {
    pub fn as_str(&self) -> &'static str {
        match self {
            FeasibilityRegime::Full => "full",
            FeasibilityRegime::Degraded => "degraded",
            FeasibilityRegime::Impossible => "impossible",
        }
    }
}

pub fn feasibility(eta: f64) -> FeasibilityRegime {
    if eta >= FULL_PIXEL_THRESHOLD {
        FeasibilityRegime::Full
    } else if eta >= MIN_PIXEL_THRESHOLD {
        FeasibilityRegime::Degraded
    } else {
        FeasibilityRegime::Impossible
    }
}

/// One luminaire as seen on the sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub led_id: u32,
    pub pixel_count: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObserveOptions {
    /// Standard deviation of additive Gaussian noise on the pixel count.
    pub noise_sigma_pixels: f64,
    /// Floor pixel counts to whole pixels.
    pub quantize: bool,
}

/// Images every luminaire inside the camera's FOV, in input order.
pub fn observe_scene<R: Rng + ?Sized>(
    luminaires: &[Luminaire],
    pose: &Pose,
    camera: &CameraModel,
    options: ObserveOptions,
    rng: &mut R,
) -> Result<Vec<Observation>, ImagingError> {
    let sigma = options.noise_sigma_pixels;
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(ImagingError::BadNoise(sigma));
    }
    let noise = Normal::new(0.0, sigma).map_err(|_| ImagingError::BadNoise(sigma))?;
    let mut out = Vec::new();
    for lum in luminaires {
        if !visible(lum, pose, camera.fov_full_angle_deg) {
            continue;
        }
        let d_cm = crate::model::distance(&lum.anchor, &pose.position);
        let eta = pixel_count(camera, lum, d_cm)?;
        let mut noisy = if sigma > 0.0 {
            (eta + noise.sample(rng)).max(0.0)
        } else {
            eta
        };
        if options.quantize {
            noisy = noisy.floor();
        }
        out.push(Observation {
            led_id: lum.led_id,
            pixel_count: noisy,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{distance, Point3};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table_one_fixture(at: Point3) -> Luminaire {
        Luminaire::new(
            1,
            at,
            FixtureShape::Circular { radius_mm: 85.0 },
            20.0,
            1.0,
            1500.0,
        )
        .unwrap()
        .with_declared_area(22_700.0)
        .unwrap()
    }

    #[test]
    fn image_distance_examples() {
        assert!((image_distance(5.0, 10.0).unwrap() - 10.0).abs() < 1e-12);
        assert!((image_distance(5.0, 3000.0).unwrap() - 5.0 * 3000.0 / 2995.0).abs() < 1e-12);
        assert!((image_distance(5.0, 3000.0).unwrap() - 5.00835).abs() < 1e-5);
        assert!((image_distance(5.0, 1e12).unwrap() - 5.0).abs() < 1e-9);
        assert!(image_distance(5.0, 5.0).is_err());
    }

    #[test]
    fn projection_invariants() {
        let cam = CameraModel::default();
        let lum = Luminaire::new(
            2,
            Point3::default(),
            FixtureShape::Rectangular {
                width_mm: 100.0,
                height_mm: 100.0,
            },
            20.0,
            1.0,
            1.0,
        )
        .unwrap();
        let p = project(&cam, &lum, 3000.0).unwrap();
        assert!((p.magnification - p.image_distance_mm / 3000.0).abs() < 1e-12);
        let rho2 = cam.pixel_edge_mm * cam.pixel_edge_mm;
        assert!((p.pixel_count - p.image_width_mm * p.image_height_mm / rho2).abs() < 1e-9);
        // Far field approximation is within (d / (d - f))^2 of exact.
        let far = pixel_count(&cam, &lum, 300.0).unwrap();
        assert!((p.pixel_count / far - (3000.0f64 / 2995.0).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn pixel_count_examples() {
        let cam = CameraModel::default();
        let lum = table_one_fixture(Point3::default());
        let eta = pixel_count(&cam, &lum, 300.0).unwrap();
        assert!((eta - 1250.9).abs() < 0.1, "eta = {eta}");
        let far = pixel_count(&cam, &lum, 600.0).unwrap();
        assert!((far - eta / 4.0).abs() < 1e-9);
        let dark = Luminaire {
            area_mm2: 0.0,
            ..lum.clone()
        };
        assert_eq!(pixel_count(&cam, &dark, 300.0).unwrap(), 0.0);
        assert!(pixel_count(&cam, &lum, 0.0).is_err());
        assert!(pixel_count(&cam, &lum, -3.0).is_err());
    }

    #[test]
    fn distance_from_pixels_examples() {
        let tau = RangingConstant { tau_mm: 7.0 };
        assert!((distance_from_pixels(tau, 49.0).unwrap() - 1.0).abs() < 1e-12);
        let cam = CameraModel::default();
        let lum = table_one_fixture(Point3::default());
        let tau = RangingConstant::new(&cam, &lum);
        assert!((distance_from_pixels(tau, 1250.9).unwrap() - 3000.0).abs() < 1.0);
        let d0 = distance_from_pixels(tau, 100.0).unwrap();
        assert!((distance_from_pixels(tau, 400.0).unwrap() - d0 / 2.0).abs() < 1e-9);
        assert!(distance_from_pixels(tau, 0.0).is_err());
        // tau for the default camera and fixture is ~106.1 m.
        assert!((tau.tau_mm / 1000.0 - 106.1).abs() < 0.05);
    }

    #[test]
    fn visibility_examples() {
        let cam = Pose::facing_up(Point3::new(0.0, 0.0, 100.0));
        let h = 200.0;
        assert!(visible(&table_one_fixture(Point3::new(0.0, 0.0, 300.0)), &cam, 120.0));
        let at = |deg: f64| table_one_fixture(Point3::new(h * deg.to_radians().tan(), 0.0, 300.0));
        assert!(visible(&at(59.0), &cam, 120.0));
        assert!(!visible(&at(61.0), &cam, 120.0));
        assert!(visible(&at(0.0), &cam, 0.0));
        assert!(!visible(&at(0.5), &cam, 0.0));
    }

    #[test]
    fn feasibility_thresholds() {
        assert_eq!(feasibility(4.0), FeasibilityRegime::Full);
        assert_eq!(feasibility(2.0), FeasibilityRegime::Degraded);
        assert_eq!(feasibility(1.0), FeasibilityRegime::Degraded);
        assert_eq!(feasibility(0.5), FeasibilityRegime::Impossible);
    }

    #[test]
    fn observe_scene_noise_free_is_exact() {
        let cam = CameraModel::default();
        let pose = Pose::facing_up(Point3::new(100.0, 100.0, 100.0));
        let lums: Vec<_> = (0..5)
            .map(|i| {
                let mut l = table_one_fixture(Point3::new(100.0 + 60.0 * i as f64, 100.0, 300.0));
                l.led_id = i;
                l
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let obs = observe_scene(&lums, &pose, &cam, ObserveOptions::default(), &mut rng).unwrap();
        assert!(!obs.is_empty());
        for o in &obs {
            let lum = &lums[o.led_id as usize];
            let exact = pixel_count(&cam, lum, distance(&lum.anchor, &pose.position)).unwrap();
            assert_eq!(o.pixel_count, exact);
        }
    }

    #[test]
    fn observe_scene_orders_overhead_near_far() {
        // Location 1: green almost overhead, blue close, red at a wide angle.
        let cam = CameraModel::default();
        let pose = Pose::facing_up(Point3::new(300.0, 300.0, 100.0));
        let mk = |id, x| {
            let mut l = table_one_fixture(Point3::new(x, 300.0, 300.0));
            l.led_id = id;
            l
        };
        let lums = [mk(0, 160.0), mk(1, 305.0), mk(2, 420.0)]; // red, green, blue
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let obs = observe_scene(&lums, &pose, &cam, ObserveOptions::default(), &mut rng).unwrap();
        let eta = |id| obs.iter().find(|o| o.led_id == id).unwrap().pixel_count;
        assert!(eta(1) > eta(2) && eta(2) > eta(0));
    }

    #[test]
    fn observe_scene_is_seed_deterministic() {
        let cam = CameraModel::default();
        let pose = Pose::facing_up(Point3::new(0.0, 0.0, 100.0));
        let lums: Vec<_> = (0..4)
            .map(|i| table_one_fixture(Point3::new(50.0 * i as f64, 20.0, 300.0)))
            .collect();
        let opts = ObserveOptions {
            noise_sigma_pixels: 30.0,
            quantize: false,
        };
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            observe_scene(&lums, &pose, &cam, opts, &mut rng).unwrap()
        };
        let (a, b) = (run(9), run(9));
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.pixel_count.to_bits(), y.pixel_count.to_bits());
        }
        assert_ne!(run(9)[0].pixel_count, run(10)[0].pixel_count);

        let quant = ObserveOptions { quantize: true, ..opts };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for o in observe_scene(&lums, &pose, &cam, quant, &mut rng).unwrap() {
            assert_eq!(o.pixel_count, o.pixel_count.floor());
        }
    }

    /// Brute force over random ceiling layouts: the nearest fixture always has
    /// the largest image, and sorting by pixel count equals sorting by range.
    #[test]
    fn nearest_fixture_has_largest_image() {
        use rand::Rng;
        let cam = CameraModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let pose = Pose::facing_up(Point3::new(
                rng.random_range(0.0..500.0),
                rng.random_range(0.0..500.0),
                rng.random_range(0.0..250.0),
            ));
            let lums: Vec<_> = (0..8)
                .map(|i| {
                    let mut l = table_one_fixture(Point3::new(
                        rng.random_range(0.0..500.0),
                        rng.random_range(0.0..500.0),
                        300.0,
                    ));
                    l.led_id = i;
                    l
                })
                .collect();
            let obs = observe_scene(&lums, &pose, &cam, ObserveOptions::default(), &mut rng).unwrap();
            if obs.is_empty() {
                continue;
            }
            let range = |id: u32| distance(&lums[id as usize].anchor, &pose.position);
            let mut by_eta: Vec<_> = obs.iter().map(|o| (o.pixel_count, o.led_id)).collect();
            by_eta.sort_by(|a, b| b.0.total_cmp(&a.0));
            let mut by_range: Vec<_> = obs.iter().map(|o| (range(o.led_id), o.led_id)).collect();
            by_range.sort_by(|a, b| a.0.total_cmp(&b.0));
            assert_eq!(by_eta[0].1, by_range[0].1);
            let ids_eta: Vec<_> = by_eta.iter().map(|p| p.1).collect();
            let ids_range: Vec<_> = by_range.iter().map(|p| p.1).collect();
            assert_eq!(ids_eta, ids_range);
        }
    }

    proptest! {
        #[test]
        fn round_trip(k in 1f64..6.0, f in 1f64..10.0, rho in 1e-3f64..2e-2, r in 5f64..200.0) {
            let cam = CameraModel { focal_length_mm: f, pixel_edge_mm: rho, ..CameraModel::default() };
            let lum = Luminaire::new(0, Point3::default(), FixtureShape::Circular { radius_mm: r }, 20.0, 1.0, 1.0).unwrap();
            let d_mm = f * 10f64.powf(k);
            let eta = pixel_count(&cam, &lum, d_mm / 10.0).unwrap();
            let back = distance_from_pixels(RangingConstant::new(&cam, &lum), eta).unwrap();
            prop_assert!(((back - d_mm) / d_mm).abs() < 1e-9);
        }

        #[test]
        fn pixel_count_decreasing_and_regime_non_improving(d in 1f64..20_000.0, step in 0.01f64..1000.0) {
            let cam = CameraModel::default();
            let lum = table_one_fixture(Point3::default());
            let near = pixel_count(&cam, &lum, d).unwrap();
            let far = pixel_count(&cam, &lum, d + step).unwrap();
            prop_assert!(far < near);
            let rank = |r: FeasibilityRegime| r as u8;
            prop_assert!(rank(feasibility(far)) >= rank(feasibility(near)));
        }
    }
}
