//! Scenario description, JSON loading and validation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CameraModel, FixtureShape, Luminaire, Point3, Pose, RoomConfig};
use crate::server::{LedRegistry, TrackerParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{origin}: line {line}, column {column}: {message}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_owned(),
        message: message.into(),
    }
}

/// Ceiling LED layout: a regular grid, or an explicit coordinate list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedLayout {
    pub spacing_cm: f64,
    pub origin_cm: [f64; 2],
    /// When present, replaces the grid.
    pub explicit: Option<Vec<[f64; 2]>>,
}

impl Default for LedLayout {
    fn default() -> Self {
        Self {
            spacing_cm: 150.0,
            origin_cm: [75.0, 75.0],
            explicit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LuminaireSpec {
    pub shape: FixtureShape,
    /// Datasheet area; must match the shape within 0.1%.
    pub area_mm2: Option<f64>,
    pub half_power_semi_angle_deg: f64,
    pub center_intensity: f64,
    pub emitted_power_mw: f64,
}

impl Default for LuminaireSpec {
    /// 170 mm round panel, 22700 mm², 20° semi-angle, 1.5 W.
    fn default() -> Self {
        Self {
            shape: FixtureShape::Circular { radius_mm: 85.0 },
            area_mm2: Some(22_700.0),
            half_power_semi_angle_deg: 20.0,
            center_intensity: 1.0,
            emitted_power_mw: 1500.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Trajectory {
    pub waypoints: Vec<[f64; 2]>,
    pub speed_cm_s: f64,
    /// Return from the last waypoint to the first and keep looping.
    pub closed: bool,
}

impl Default for Trajectory {
    fn default() -> Self {
        Self {
            waypoints: vec![[400.0, 400.0], [800.0, 400.0], [800.0, 800.0], [400.0, 800.0]],
            speed_cm_s: 10.0,
            closed: true,
        }
    }
}

impl Trajectory {
    fn segments(&self) -> Vec<([f64; 2], [f64; 2])> {
        let w = &self.waypoints;
        let mut segs: Vec<_> = w.windows(2).map(|p| (p[0], p[1])).collect();
        if self.closed && w.len() > 2 {
            segs.push((w[w.len() - 1], w[0]));
        }
        segs
    }

    pub fn length_cm(&self) -> f64 {
        self.segments()
            .iter()
            .map(|(a, b)| (b[0] - a[0]).hypot(b[1] - a[1]))
            .sum()
    }

    /// Horizontal position after `t_s` seconds. Open paths stop at the last
    /// waypoint; closed paths wrap.
    pub fn position_at(&self, t_s: f64) -> [f64; 2] {
        let segs = self.segments();
        let total = self.length_cm();
        if segs.is_empty() || total == 0.0 {
            return self.waypoints.first().copied().unwrap_or([0.0, 0.0]);
        }
        let mut s = self.speed_cm_s * t_s;
        s = if self.closed { s.rem_euclid(total) } else { s.clamp(0.0, total) };
        for (a, b) in &segs {
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            if s <= len {
                let f = if len > 0.0 { s / len } else { 0.0 };
                return [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])];
            }
            s -= len;
        }
        segs.last().map(|(_, b)| *b).expect("non-empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Gaussian noise on each pixel count.
    pub pixel_sigma: f64,
    /// Gaussian noise added directly to each range, for solver-only studies.
    pub distance_sigma_cm: f64,
    /// Floor pixel counts to whole pixels.
    pub quantize_pixels: bool,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            pixel_sigma: DEFAULT_PIXEL_SIGMA,
            distance_sigma_cm: 0.0,
            quantize_pixels: false,
        }
    }
}

/// Pixel-count noise giving roughly 5 cm RMS range error over the LEDs in
/// view from the default camera height.
pub const DEFAULT_PIXEL_SIGMA: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModemSpec {
    pub samples_per_bit: usize,
    /// Per-sample SNIR of the LED-ID link; `None` decodes noise-free.
    pub id_snir_db: Option<f64>,
}

impl Default for ModemSpec {
    fn default() -> Self {
        Self {
            samples_per_bit: 4,
            id_snir_db: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSpec {
    pub members: usize,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self { members: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BerSpec {
    pub snir_db_min: f64,
    pub snir_db_max: f64,
    pub snir_db_step: f64,
    pub n_bits: usize,
}

impl Default for BerSpec {
    fn default() -> Self {
        Self {
            snir_db_min: 0.0,
            snir_db_max: 15.0,
            snir_db_step: 1.0,
            n_bits: 100_000,
        }
    }
}

impl BerSpec {
    pub fn grid(&self) -> Vec<f64> {
        inclusive_grid(self.snir_db_min, self.snir_db_max, self.snir_db_step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RangeSpec {
    pub d_min_m: f64,
    pub d_max_m: f64,
    pub d_step_m: f64,
}

impl Default for RangeSpec {
    fn default() -> Self {
        Self {
            d_min_m: 0.5,
            d_max_m: 150.0,
            d_step_m: 0.5,
        }
    }
}

impl RangeSpec {
    pub fn grid(&self) -> Vec<f64> {
        inclusive_grid(self.d_min_m, self.d_max_m, self.d_step_m)
    }
}

/// `min, min + step, ...` up to `max`, computed by index to avoid drift.
fn inclusive_grid(min: f64, max: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) || max < min {
        return Vec::new();
    }
    let n = ((max - min) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| min + step * i as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSpec {
    pub interval_ms: u64,
    pub limit: u32,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            interval_ms: 2_000,
            limit: 3,
        }
    }
}

/// Motion used by the filter comparison in place of the tracking
/// trajectory: a straight walk, long enough that the run never reaches a
/// turn, so the curves show convergence rather than manoeuvre transients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterCmpSpec {
    pub trajectory: Trajectory,
    pub duration_s: f64,
}

impl Default for FilterCmpSpec {
    fn default() -> Self {
        Self {
            trajectory: Trajectory {
                waypoints: vec![[150.0, 150.0], [1069.0, 1069.0]],
                speed_cm_s: 50.0,
                closed: false,
            },
            duration_s: 25.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub room: RoomConfig,
    pub leds: LedLayout,
    pub luminaire: LuminaireSpec,
    pub camera: CameraModel,
    pub camera_height_cm: f64,
    pub trajectory: Trajectory,
    pub sampling_hz: f64,
    pub duration_s: f64,
    pub noise: NoiseSpec,
    pub modem: ModemSpec,
    pub tracker: TrackerParams,
    pub probe: ProbeSpec,
    pub seed: u64,
    pub ensemble: EnsembleSpec,
    pub ber: BerSpec,
    pub range: RangeSpec,
    pub filtercmp: FilterCmpSpec,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            room: RoomConfig::default(),
            leds: LedLayout::default(),
            luminaire: LuminaireSpec::default(),
            camera: CameraModel::default(),
            camera_height_cm: 100.0,
            trajectory: Trajectory::default(),
            sampling_hz: 1.0,
            duration_s: 50.0,
            noise: NoiseSpec::default(),
            modem: ModemSpec::default(),
            tracker: TrackerParams::default(),
            probe: ProbeSpec::default(),
            seed: 1,
            ensemble: EnsembleSpec::default(),
            ber: BerSpec::default(),
            range: RangeSpec::default(),
            filtercmp: FilterCmpSpec::default(),
        }
    }
}

impl Scenario {
    pub fn from_json(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            origin: origin.to_owned(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: origin.clone(),
            message: e.to_string(),
        })?;
        Self::from_json(&text, &origin)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialises")
    }

    /// Number of sample ticks in a tracking run.
    pub fn ticks(&self) -> usize {
        (self.duration_s * self.sampling_hz).round() as usize
    }

    pub fn tick_time_s(&self, k: usize) -> f64 {
        k as f64 / self.sampling_hz
    }

    pub fn truth_at(&self, t_s: f64) -> Point3 {
        let [x, y] = self.trajectory.position_at(t_s);
        Point3::new(x, y, self.camera_height_cm)
    }

    pub fn pose_at(&self, t_s: f64) -> Pose {
        Pose::facing_up(self.truth_at(t_s))
    }

    fn led_positions(&self) -> Vec<[f64; 2]> {
        if let Some(list) = &self.leds.explicit {
            return list.clone();
        }
        let s = self.leds.spacing_cm;
        let [ox, oy] = self.leds.origin_cm;
        let count = |origin: f64, extent: f64| {
            if origin > extent {
                0
            } else {
                ((extent - origin) / s + 1e-9).floor() as usize + 1
            }
        };
        let (nx, ny) = (count(ox, self.room.width_cm), count(oy, self.room.depth_cm));
        let mut out = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            for j in 0..ny {
                out.push([ox + s * i as f64, oy + s * j as f64]);
            }
        }
        out
    }

    pub fn luminaires(&self) -> Result<Vec<Luminaire>, ConfigError> {
        let spec = &self.luminaire;
        self.led_positions()
            .into_iter()
            .enumerate()
            .map(|(i, [x, y])| {
                let lum = Luminaire::new(
                    i as u32,
                    Point3::new(x, y, self.room.ceiling_height_cm),
                    spec.shape,
                    spec.half_power_semi_angle_deg,
                    spec.center_intensity,
                    spec.emitted_power_mw,
                )
                .map_err(|e| invalid("luminaire", e.to_string()))?;
                match spec.area_mm2 {
                    Some(a) => lum
                        .with_declared_area(a)
                        .map_err(|e| invalid("luminaire.area_mm2", e.to_string())),
                    None => Ok(lum),
                }
            })
            .collect()
    }

    pub fn registry(&self) -> Result<LedRegistry, ConfigError> {
        LedRegistry::from_luminaires(self.room.ceiling_height_cm, &self.luminaires()?)
            .map_err(|e| invalid("leds", e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.room
            .validate()
            .map_err(|e| invalid("room", e.to_string()))?;
        self.camera
            .validate()
            .map_err(|e| invalid("camera", e.to_string()))?;
        let finite_pos = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(field, format!("must be positive, got {v}")))
            }
        };
        finite_pos("sampling_hz", self.sampling_hz)?;
        finite_pos("duration_s", self.duration_s)?;
        if self.leds.explicit.is_none() {
            finite_pos("leds.spacing_cm", self.leds.spacing_cm)?;
        }
        if !(self.camera_height_cm >= 0.0 && self.camera_height_cm < self.room.ceiling_height_cm) {
            return Err(invalid(
                "camera_height_cm",
                format!(
                    "must lie in [0, {}), got {}",
                    self.room.ceiling_height_cm, self.camera_height_cm
                ),
            ));
        }
        if self.trajectory.waypoints.is_empty() {
            return Err(invalid("trajectory.waypoints", "needs at least one waypoint"));
        }
        if !(self.trajectory.speed_cm_s.is_finite() && self.trajectory.speed_cm_s >= 0.0) {
            return Err(invalid("trajectory.speed_cm_s", "must be non-negative"));
        }
        let inside = |w: &[f64; 2]| {
            (0.0..=self.room.width_cm).contains(&w[0]) && (0.0..=self.room.depth_cm).contains(&w[1])
        };
        for (i, w) in self.trajectory.waypoints.iter().enumerate() {
            if !inside(w) {
                return Err(invalid(
                    &format!("trajectory.waypoints[{i}]"),
                    format!("{w:?} is outside the room"),
                ));
            }
        }
        for (i, w) in self.filtercmp.trajectory.waypoints.iter().enumerate() {
            if !inside(w) {
                return Err(invalid(
                    &format!("filtercmp.trajectory.waypoints[{i}]"),
                    format!("{w:?} is outside the room"),
                ));
            }
        }
        if self.filtercmp.trajectory.waypoints.is_empty() {
            return Err(invalid("filtercmp.trajectory.waypoints", "needs at least one waypoint"));
        }
        finite_pos("filtercmp.duration_s", self.filtercmp.duration_s)?;
        let nonneg = |field: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(invalid(field, format!("must be non-negative, got {v}")))
            }
        };
        nonneg("noise.pixel_sigma", self.noise.pixel_sigma)?;
        nonneg("noise.distance_sigma_cm", self.noise.distance_sigma_cm)?;
        if self.modem.samples_per_bit == 0 {
            return Err(invalid("modem.samples_per_bit", "must be at least 1"));
        }
        if self.ensemble.members == 0 {
            return Err(invalid("ensemble.members", "must be at least 1"));
        }
        if self.ber.n_bits < crate::modem::MIN_BER_BITS {
            return Err(invalid(
                "ber.n_bits",
                format!("must be at least {}", crate::modem::MIN_BER_BITS),
            ));
        }
        if self.ber.grid().is_empty() {
            return Err(invalid("ber", "empty SNIR grid"));
        }
        if self.range.grid().is_empty() || !(self.range.d_min_m > 0.0) {
            return Err(invalid("range", "grid must be non-empty with positive distances"));
        }
        self.tracker
            .config(1.0 / self.sampling_hz)
            .map_err(|e| invalid("tracker", e.to_string()))?;
        if self.probe.limit == 0 {
            return Err(invalid("probe.limit", "must be at least 1"));
        }
        self.registry()?;
        Ok(())
    }
}

/// Result of scanning the floor for LED coverage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VisibilityReport {
    pub points_checked: usize,
    pub min_visible: usize,
    /// Grid points with fewer than three LEDs in view.
    pub gaps: Vec<[f64; 2]>,
}

/// Counts visible LEDs at camera height over a `step_cm` grid kept
/// `wall_margin_cm` away from the walls.
pub fn visibility_scan(scenario: &Scenario, step_cm: f64, wall_margin_cm: f64) -> Result<VisibilityReport, ConfigError> {
    let lums = scenario.luminaires()?;
    let fov = scenario.camera.fov_full_angle_deg;
    let xs = inclusive_grid(wall_margin_cm, scenario.room.width_cm - wall_margin_cm, step_cm);
    let ys = inclusive_grid(wall_margin_cm, scenario.room.depth_cm - wall_margin_cm, step_cm);
    let mut report = VisibilityReport {
        points_checked: 0,
        min_visible: usize::MAX,
        gaps: Vec::new(),
    };
    for &x in &xs {
        for &y in &ys {
            let pose = Pose::facing_up(Point3::new(x, y, scenario.camera_height_cm));
            let n = lums
                .iter()
                .filter(|l| crate::imaging::visible(l, &pose, fov))
                .count();
            report.points_checked += 1;
            report.min_visible = report.min_visible.min(n);
            if n < 3 {
                report.gaps.push([x, y]);
            }
        }
    }
    if report.points_checked == 0 {
        report.min_visible = 0;
    }
    Ok(report)
}
