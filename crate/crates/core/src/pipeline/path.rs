//! Keyframed camera paths with linear interpolation.
//!
//! ```toml
//! [[keyframes]]
//! time = 0.0
//! position = [0.0, 0.0, 0.0]
//! target = [0.0, 0.0, 1.0]
//! focus_distance = 1.6          # optional, keeps the base camera's value
//! aperture = 0.06               # optional
//! ```

use glam::DVec3;
use serde::{Deserialize, Serialize};

use super::config::ConfigError;
use crate::lens::{Pose, ThinLensCamera};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keyframe {
    /// Seconds.
    pub time: f64,
    pub position: DVec3,
    pub target: DVec3,
    #[serde(default = "default_up")]
    pub up: DVec3,
    #[serde(default)]
    pub focus_distance: Option<f64>,
    #[serde(default)]
    pub aperture: Option<f64>,
}

fn default_up() -> DVec3 {
    DVec3::Y
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraPath {
    pub keyframes: Vec<Keyframe>,
}

impl CameraPath {
    pub fn new(keyframes: Vec<Keyframe>) -> Result<Self, ConfigError> {
        let path = Self { keyframes };
        path.validate()?;
        Ok(path)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let path: CameraPath = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        path.validate()?;
        Ok(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.keyframes.is_empty() {
            return Err(ConfigError::Parse("camera path has no keyframes".into()));
        }
        for pair in self.keyframes.windows(2) {
            if !(pair[1].time > pair[0].time) {
                return Err(ConfigError::Parse(format!(
                    "keyframe times must be strictly increasing ({} then {})",
                    pair[0].time, pair[1].time
                )));
            }
        }
        if let Some(k) = self.keyframes.iter().find(|k| (k.target - k.position).length() == 0.0) {
            return Err(ConfigError::Parse(format!("keyframe at t={} looks at its own position", k.time)));
        }
        Ok(())
    }

    /// Camera at `time`, clamped to the first and last keyframes. Lens
    /// fields not keyed keep the values of `base`.
    pub fn camera_at(&self, time: f64, base: &ThinLensCamera) -> ThinLensCamera {
        let ks = &self.keyframes;
        let i = ks.partition_point(|k| k.time <= time);
        let (a, b, t) = if i == 0 {
            (&ks[0], &ks[0], 0.0)
        } else if i == ks.len() {
            (&ks[i - 1], &ks[i - 1], 0.0)
        } else {
            let (a, b) = (&ks[i - 1], &ks[i]);
            (a, b, (time - a.time) / (b.time - a.time))
        };
        let lerp_opt = |x: Option<f64>, y: Option<f64>, fallback: f64| {
            let x = x.unwrap_or(fallback);
            x + (y.unwrap_or(fallback) - x) * t
        };
        ThinLensCamera {
            aperture: lerp_opt(a.aperture, b.aperture, base.aperture),
            focus_distance: lerp_opt(a.focus_distance, b.focus_distance, base.focus_distance),
            pose: Pose::look_at(
                a.position.lerp(b.position, t),
                a.target.lerp(b.target, t),
                a.up.lerp(b.up, t),
            ),
            ..*base
        }
    }
}
