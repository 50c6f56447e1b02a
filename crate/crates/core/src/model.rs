//! Shared geometry and scene types.
//!
//! World frame: origin at a floor corner, `z` pointing up, luminaires mounted
//! at `z = ceiling_height_cm`. World lengths are centimetres; camera and
//! fixture internals (focal length, pixel edge, fixture size) are millimetres.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{field} must be finite and strictly positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("{field} = {value} is outside {range}")]
    OutOfRange {
        field: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("declared area {declared} mm^2 differs from the shape-derived {derived} mm^2 by more than 0.1%")]
    AreaMismatch { declared: f64, derived: f64 },
    #[error("optical axis must be a non-zero finite vector")]
    BadAxis,
    #[error("camera coincides with the luminaire anchor")]
    CoincidentCamera,
}

fn positive(field: &'static str, value: f64) -> Result<f64, ModelError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(ModelError::NonPositive { field, value })
    }
}

/// A point in the world frame, in centimetres.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_vector(self) -> nalgebra::Vector3<f64> {
        nalgebra::Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &nalgebra::Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn translate(self, dx: f64, dy: f64, dz: f64) -> Self {
        Self::new(self.x + dx, self.y + dy, self.z + dz)
    }

    /// Horizontal (x, y) separation, ignoring height.
    pub fn horizontal_distance(&self, other: &Point3) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Euclidean distance between two world points, in centimetres.
pub fn distance(a: &Point3, b: &Point3) -> f64 {
    let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Camera position plus the direction its optical axis points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Point3,
    optical_axis: [f64; 3],
}

impl Pose {
    /// Camera facing straight up at the ceiling.
    pub fn facing_up(position: Point3) -> Self {
        Self {
            position,
            optical_axis: [0.0, 0.0, 1.0],
        }
    }

    /// Arbitrary axis; normalised on construction.
    pub fn with_axis(position: Point3, axis: [f64; 3]) -> Result<Self, ModelError> {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if !n.is_finite() || n == 0.0 {
            return Err(ModelError::BadAxis);
        }
        Ok(Self {
            position,
            optical_axis: [axis[0] / n, axis[1] / n, axis[2] / n],
        })
    }

    pub fn optical_axis(&self) -> [f64; 3] {
        self.optical_axis
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomConfig {
    pub width_cm: f64,
    pub depth_cm: f64,
    pub ceiling_height_cm: f64,
}

impl RoomConfig {
    pub fn new(width_cm: f64, depth_cm: f64, ceiling_height_cm: f64) -> Result<Self, ModelError> {
        let room = Self {
            width_cm,
            depth_cm,
            ceiling_height_cm,
        };
        room.validate()?;
        Ok(room)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        positive("room.width_cm", self.width_cm)?;
        positive("room.depth_cm", self.depth_cm)?;
        positive("room.ceiling_height_cm", self.ceiling_height_cm)?;
        Ok(())
    }

    /// Whether `p` lies inside the room box grown by `margin` (a fraction of
    /// each dimension) on every side.
    pub fn contains_with_margin(&self, p: &Point3, margin: f64) -> bool {
        let (mx, my, mz) = (
            self.width_cm * margin,
            self.depth_cm * margin,
            self.ceiling_height_cm * margin,
        );
        p.x >= -mx
            && p.x <= self.width_cm + mx
            && p.y >= -my
            && p.y <= self.depth_cm + my
            && p.z >= -mz
            && p.z <= self.ceiling_height_cm + mz
    }
}

impl Default for RoomConfig {
    /// 40 ft x 40 ft floor with a 3 m ceiling.
    fn default() -> Self {
        Self {
            width_cm: 1219.0,
            depth_cm: 1219.0,
            ceiling_height_cm: 300.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FixtureShape {
    Circular { radius_mm: f64 },
    Rectangular { width_mm: f64, height_mm: f64 },
}

impl FixtureShape {
    pub fn area_mm2(&self) -> f64 {
        match *self {
            FixtureShape::Circular { radius_mm } => PI * radius_mm * radius_mm,
            FixtureShape::Rectangular {
                width_mm,
                height_mm,
            } => width_mm * height_mm,
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        match *self {
            FixtureShape::Circular { radius_mm } => {
                positive("shape.radius_mm", radius_mm)?;
            }
            FixtureShape::Rectangular {
                width_mm,
                height_mm,
            } => {
                positive("shape.width_mm", width_mm)?;
                positive("shape.height_mm", height_mm)?;
            }
        }
        Ok(())
    }
}

/// A ceiling LED fixture broadcasting its own coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Luminaire {
    pub led_id: u32,
    pub anchor: Point3,
    pub shape: FixtureShape,
    pub area_mm2: f64,
    pub half_power_semi_angle_deg: f64,
    /// I(0), on-axis intensity.
    pub center_intensity: f64,
    pub emitted_power_mw: f64,
}

impl Luminaire {
    /// Builds a fixture whose area is derived from its shape.
    pub fn new(
        led_id: u32,
        anchor: Point3,
        shape: FixtureShape,
        half_power_semi_angle_deg: f64,
        center_intensity: f64,
        emitted_power_mw: f64,
    ) -> Result<Self, ModelError> {
        let lum = Self {
            led_id,
            anchor,
            shape,
            area_mm2: shape.area_mm2(),
            half_power_semi_angle_deg,
            center_intensity,
            emitted_power_mw,
        };
        lum.validate()?;
        Ok(lum)
    }

    /// Replaces the derived area with a datasheet figure, which must agree
    /// with the shape to within 0.1%.
    pub fn with_declared_area(mut self, area_mm2: f64) -> Result<Self, ModelError> {
        self.area_mm2 = area_mm2;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.anchor.is_finite() {
            return Err(ModelError::NonPositive {
                field: "luminaire.anchor",
                value: f64::NAN,
            });
        }
        self.shape.validate()?;
        let derived = self.shape.area_mm2();
        if !self.area_mm2.is_finite() || (self.area_mm2 - derived).abs() > 1e-3 * derived {
            return Err(ModelError::AreaMismatch {
                declared: self.area_mm2,
                derived,
            });
        }
        let a = self.half_power_semi_angle_deg;
        if !(a > 0.0 && a < 90.0) {
            return Err(ModelError::OutOfRange {
                field: "luminaire.half_power_semi_angle_deg",
                value: a,
                range: "(0, 90)",
            });
        }
        if !(self.center_intensity.is_finite() && self.center_intensity >= 0.0) {
            return Err(ModelError::OutOfRange {
                field: "luminaire.center_intensity",
                value: self.center_intensity,
                range: "[0, inf)",
            });
        }
        Ok(())
    }
}

/// Smartphone camera intrinsics and receiver parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraModel {
    pub focal_length_mm: f64,
    /// Pixel edge length used for ranging.
    pub pixel_edge_mm: f64,
    /// Datasheet "pixel size"; informational only.
    pub pixel_size_um: f64,
    pub sensor_cols: u32,
    pub sensor_rows: u32,
    /// Full cone angle; the visibility semi-angle is half of it.
    pub fov_full_angle_deg: f64,
    pub frame_rate_fps: f64,
    /// A/W
    pub responsivity: f64,
    pub optical_filter_gain: f64,
    pub aperture_area_mm2: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        // f/4 at 5 mm gives a 1.25 mm entrance pupil.
        let pupil_radius_mm = 5.0 / 4.0 / 2.0;
        Self {
            focal_length_mm: 5.0,
            pixel_edge_mm: 7.1e-3,
            pixel_size_um: 1.0,
            sensor_cols: 640,
            sensor_rows: 320,
            fov_full_angle_deg: 120.0,
            frame_rate_fps: 30.0,
            responsivity: 0.5,
            optical_filter_gain: 1.0,
            aperture_area_mm2: PI * pupil_radius_mm * pupil_radius_mm,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        positive("camera.focal_length_mm", self.focal_length_mm)?;
        positive("camera.pixel_edge_mm", self.pixel_edge_mm)?;
        positive("camera.frame_rate_fps", self.frame_rate_fps)?;
        let fov = self.fov_full_angle_deg;
        if !(fov > 0.0 && fov < 180.0) {
            return Err(ModelError::OutOfRange {
                field: "camera.fov_full_angle_deg",
                value: fov,
                range: "(0, 180)",
            });
        }
        if self.sensor_cols == 0 || self.sensor_rows == 0 {
            return Err(ModelError::NonPositive {
                field: "camera.sensor_cols/sensor_rows",
                value: 0.0,
            });
        }
        if !(self.responsivity.is_finite() && self.responsivity >= 0.0) {
            return Err(ModelError::NonPositive {
                field: "camera.responsivity",
                value: self.responsivity,
            });
        }
        if !(self.optical_filter_gain.is_finite() && self.optical_filter_gain >= 0.0) {
            return Err(ModelError::NonPositive {
                field: "camera.optical_filter_gain",
                value: self.optical_filter_gain,
            });
        }
        positive("camera.aperture_area_mm2", self.aperture_area_mm2)?;
        Ok(())
    }

    pub fn fov_semi_angle_deg(&self) -> f64 {
        self.fov_full_angle_deg / 2.0
    }
}

/// Angle in degrees between the camera's optical axis and the ray from the
/// camera to the luminaire anchor.
pub fn incidence_angle(luminaire: &Luminaire, camera: &Pose) -> Result<f64, ModelError> {
    let p = camera.position;
    let ray = [
        luminaire.anchor.x - p.x,
        luminaire.anchor.y - p.y,
        luminaire.anchor.z - p.z,
    ];
    let len = (ray[0] * ray[0] + ray[1] * ray[1] + ray[2] * ray[2]).sqrt();
    if len == 0.0 {
        return Err(ModelError::CoincidentCamera);
    }
    let axis = camera.optical_axis();
    let cos = (ray[0] * axis[0] + ray[1] * axis[1] + ray[2] * axis[2]) / len;
    Ok(cos.clamp(-1.0, 1.0).acos().to_degrees())
}
