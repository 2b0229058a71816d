//! Thin-lens camera, circle-of-confusion math and near/far field
//! classification.
//!
//! CoC sizes are unsigned diameters in full-resolution pixels. Filters that
//! need a radius halve them explicitly.

use glam::{DVec2, DVec3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{CameraDefaults, Ray};

/// Diagonal of one pixel: the largest CoC still rendered as a point.
pub const PIXEL_DIAGONAL: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LensError {
    #[error("depth must be positive, got {0}")]
    Domain(f64),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

/// Rigid camera placement as an orthonormal basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: DVec3,
    pub right: DVec3,
    pub up: DVec3,
    pub forward: DVec3,
}

impl Pose {
    pub fn look_at(position: DVec3, target: DVec3, up: DVec3) -> Self {
        let forward = (target - position).normalize();
        let right = forward.cross(up).normalize();
        let up = right.cross(forward);
        Self {
            position,
            right,
            up,
            forward,
        }
    }

    pub fn to_camera(&self, p: DVec3) -> DVec3 {
        let d = p - self.position;
        DVec3::new(d.dot(self.right), d.dot(self.up), d.dot(self.forward))
    }

    pub fn to_world(&self, c: DVec3) -> DVec3 {
        self.position + self.right * c.x + self.up * c.y + self.forward * c.z
    }
}

/// Classification of a depth relative to the zone of focus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Field {
    Near,
    Focus,
    Far,
}

/// Depth interval rendered sharp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocusZone {
    pub z_near: f64,
    pub z_far: f64,
}

impl FocusZone {
    pub fn contains(&self, z: f64) -> bool {
        z >= self.z_near && z <= self.z_far
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThinLensCamera {
    /// Lens diameter in meters.
    pub aperture: f64,
    pub focal_length: f64,
    pub focus_distance: f64,
    pub sensor_width: f64,
    pub image_width: u32,
    pub image_height: u32,
    pub pose: Pose,
}

impl ThinLensCamera {
    pub fn from_defaults(d: &CameraDefaults, image_width: u32, image_height: u32) -> Self {
        Self {
            aperture: d.aperture,
            focal_length: d.focal_length,
            focus_distance: d.focus_distance,
            sensor_width: d.sensor_width,
            image_width,
            image_height,
            pose: Pose::look_at(d.position, d.target, d.up),
        }
    }

    pub fn validate(&self) -> Result<(), LensError> {
        let bad = |m: String| Err(LensError::InvalidCamera(m));
        if !(self.focal_length > 0.0) {
            return bad(format!("focal length must be > 0, got {}", self.focal_length));
        }
        if !(self.focus_distance > self.focal_length) {
            return bad(format!(
                "focus distance {} must exceed focal length {}",
                self.focus_distance, self.focal_length
            ));
        }
        if !(self.aperture >= 0.0) || !self.aperture.is_finite() {
            return bad(format!("aperture must be finite and >= 0, got {}", self.aperture));
        }
        if !(self.sensor_width > 0.0) {
            return bad(format!("sensor width must be > 0, got {}", self.sensor_width));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return bad("image dimensions must be non-zero".into());
        }
        Ok(())
    }

    /// Sensor meters per pixel.
    pub fn pixel_pitch(&self) -> f64 {
        self.sensor_width / self.image_width as f64
    }

    pub fn horizontal_fov(&self) -> f64 {
        2.0 * (self.sensor_width / (2.0 * self.focal_length)).atan()
    }

    /// Camera-space direction (not normalized, z = 1) through a continuous
    /// pixel position; `(0, 0)` is the top-left corner of the image.
    pub fn camera_dir(&self, px: f64, py: f64) -> DVec3 {
        let scale = self.pixel_pitch() / self.focal_length;
        DVec3::new(
            (px - self.image_width as f64 * 0.5) * scale,
            -(py - self.image_height as f64 * 0.5) * scale,
            1.0,
        )
    }

    /// Pinhole ray through a continuous pixel position.
    pub fn primary_ray(&self, px: f64, py: f64) -> Ray {
        let dir = self.pose.to_world(self.camera_dir(px, py)) - self.pose.position;
        Ray::new(self.pose.position, dir, 0.0, f64::INFINITY)
    }

    /// Continuous pixel position of a world point, or `None` when it lies
    /// on or behind the lens plane.
    pub fn project(&self, p: DVec3) -> Option<DVec2> {
        let c = self.pose.to_camera(p);
        if c.z <= 1e-9 {
            return None;
        }
        let scale = self.focal_length / self.pixel_pitch();
        Some(DVec2::new(
            c.x / c.z * scale + self.image_width as f64 * 0.5,
            -c.y / c.z * scale + self.image_height as f64 * 0.5,
        ))
    }

    /// View-space depth along the optical axis.
    pub fn view_depth(&self, p: DVec3) -> f64 {
        (p - self.pose.position).dot(self.pose.forward)
    }

    /// World point at view depth `z` under a continuous pixel position.
    pub fn unproject(&self, px: f64, py: f64, z: f64) -> DVec3 {
        self.pose.to_world(self.camera_dir(px, py) * z)
    }

    /// CoC diameter in pixels of a point at view depth `z`:
    /// `a·f·|z−d| / (z·(d−f)) · w_i / w_s`. `z = +∞` yields the limit.
    pub fn coc_diameter_px(&self, z: f64) -> Result<f64, LensError> {
        if !(z > 0.0) {
            return Err(LensError::Domain(z));
        }
        let (a, f, d) = (self.aperture, self.focal_length, self.focus_distance);
        let px_per_m = self.image_width as f64 / self.sensor_width;
        let rel = if z.is_infinite() { 1.0 } else { (z - d).abs() / z };
        Ok(a * f * rel / (d - f) * px_per_m)
    }

    /// CoC for depths that are known to be valid (G-buffer values).
    pub(crate) fn coc_px(&self, z: f64) -> f64 {
        self.coc_diameter_px(z).unwrap_or(0.0)
    }

    /// Depth range whose CoC stays within one pixel diagonal.
    pub fn zone_of_focus(&self) -> FocusZone {
        let (a, f, d) = (self.aperture, self.focal_length, self.focus_distance);
        if a <= 0.0 {
            return FocusZone {
                z_near: 0.0,
                z_far: f64::INFINITY,
            };
        }
        let af = a * f;
        let k = PIXEL_DIAGONAL * (d - f) * self.sensor_width / self.image_width as f64;
        let z_near = af * d / (af + k);
        let denom = af - k;
        let z_far = if denom > 0.0 { af * d / denom } else { f64::INFINITY };
        FocusZone { z_near, z_far }
    }

    pub fn classify_field(&self, z: f64) -> Field {
        let zone = self.zone_of_focus();
        if z < zone.z_near {
            Field::Near
        } else if z <= zone.z_far {
            Field::Focus
        } else {
            Field::Far
        }
    }
}

/// Near-field share of a sample at depth `z`: 1 up to `d − band`, 0 from
/// `d + band`, linear in between.
pub fn field_split_weight(z: f64, focus_distance: f64, band: f64) -> f64 {
    debug_assert!(band > 0.0);
    if z.is_infinite() {
        return 0.0;
    }
    (0.5 - (z - focus_distance) / (2.0 * band)).clamp(0.0, 1.0)
}
