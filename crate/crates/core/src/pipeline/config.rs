//! Pipeline configuration, its TOML form and named runtime parameters.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composite::{CompositeParams, Mode};
use crate::postprocess::MainFilterParams;
use crate::raymask::RayMaskParams;
use crate::reconstruct::ReconstructParams;
use crate::taa::DEFAULT_TAA_BLEND;
use crate::temporal::TemporalParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("{param} = {value} is out of range; allowed {range}")]
    OutOfRange { param: String, value: f64, range: String },
    #[error("invalid config: {0}")]
    Parse(String),
}

impl ConfigError {
    /// The parameter an error refers to, if any.
    pub fn param(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownParam(p) | ConfigError::OutOfRange { param: p, .. } => Some(p),
            ConfigError::Parse(_) => None,
        }
    }

    pub fn range(&self) -> Option<&str> {
        match self {
            ConfigError::OutOfRange { range, .. } => Some(range),
            _ => None,
        }
    }
}

/// Which intermediate stages pass through temporal anti-aliasing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaaConfig {
    /// Sharp visibility image, before the post-process filters.
    pub sharp: bool,
    /// Half-res post-process color after filtering.
    pub post: bool,
    /// Final composite.
    #[serde(rename = "final")]
    pub final_image: bool,
    pub blend: f32,
}

impl Default for TaaConfig {
    fn default() -> Self {
        Self {
            sharp: true,
            post: true,
            final_image: true,
            blend: DEFAULT_TAA_BLEND,
        }
    }
}

impl TaaConfig {
    pub fn disabled() -> Self {
        Self {
            sharp: false,
            post: false,
            final_image: false,
            ..Self::default()
        }
    }

    pub fn any(&self) -> bool {
        self.sharp || self.post || self.final_image
    }
}

/// Per-run lens settings that override the scene's camera defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LensOverrides {
    pub aperture: Option<f64>,
    pub focal_length: Option<f64>,
    pub focus_distance: Option<f64>,
    pub sensor_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub width: u32,
    pub height: u32,
    pub mode: Mode,
    /// Ray budget `m` per half-res pixel.
    pub max_rays: u32,
    /// Edge response scale `s`.
    pub scale: f32,
    /// Near/far transition half-width in meters; `None` is 5% of the focus distance.
    pub epsilon_band: Option<f64>,
    pub alpha: f32,
    pub alpha_motion: f32,
    pub taa: TaaConfig,
    pub seed: u64,
    /// Rayon worker threads; 0 uses every core.
    pub workers: usize,
    /// Samples per pixel in ground-truth mode.
    pub gt_spp: u32,
    /// Simulated seconds per frame, used to sample the camera path.
    pub frame_dt: f64,
    pub camera_path: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub lens: LensOverrides,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            width: 320,
            height: 180,
            mode: Mode::Hybrid,
            max_rays: RayMaskParams::default().max_rays,
            scale: RayMaskParams::default().scale,
            epsilon_band: None,
            alpha: TemporalParams::default().alpha,
            alpha_motion: TemporalParams::default().alpha_motion,
            taa: TaaConfig::default(),
            seed: 0,
            workers: 0,
            gt_spp: 256,
            frame_dt: 1.0 / 30.0,
            camera_path: None,
            output_dir: None,
            lens: LensOverrides::default(),
        }
    }
}

/// Inclusive numeric bounds of a named parameter.
#[derive(Debug, Clone, Copy)]
struct Range {
    lo: f64,
    hi: f64,
    lo_open: bool,
    integer: bool,
}

impl Range {
    const fn closed(lo: f64, hi: f64) -> Self {
        Self { lo, hi, lo_open: false, integer: false }
    }
    const fn open_low(lo: f64, hi: f64) -> Self {
        Self { lo, hi, lo_open: true, integer: false }
    }
    const fn int(lo: f64, hi: f64) -> Self {
        Self { lo, hi, lo_open: false, integer: true }
    }

    fn contains(&self, v: f64) -> bool {
        let low = if self.lo_open { v > self.lo } else { v >= self.lo };
        v.is_finite() && low && v <= self.hi && (!self.integer || v.fract() == 0.0)
    }

    fn describe(&self) -> String {
        let open = if self.lo_open { "(" } else { "[" };
        let kind = if self.integer { " integer" } else { "" };
        format!("{open}{}, {}]{kind}", self.lo, self.hi)
    }
}

/// Names accepted by [`PipelineConfig::set_param`].
pub const PARAM_NAMES: [&str; 18] = [
    "width",
    "height",
    "m",
    "s",
    "epsilon_band",
    "alpha",
    "alpha_motion",
    "taa_blend",
    "taa_sharp",
    "taa_post",
    "taa_final",
    "seed",
    "workers",
    "gt_spp",
    "aperture",
    "focal_length",
    "focus_distance",
    "sensor_width",
];

fn range_of(name: &str) -> Option<Range> {
    Some(match name {
        "width" | "height" => Range::int(16.0, 4096.0),
        "m" => Range::int(0.0, 64.0),
        "s" => Range::open_low(0.0, 100.0),
        "epsilon_band" => Range::closed(0.0, 100.0),
        "alpha" | "alpha_motion" | "taa_blend" => Range::closed(0.0, 0.999),
        "taa_sharp" | "taa_post" | "taa_final" => Range::int(0.0, 1.0),
        "seed" => Range::int(0.0, 9_007_199_254_740_991.0),
        "workers" => Range::int(0.0, 256.0),
        "gt_spp" => Range::int(1.0, 65536.0),
        "aperture" => Range::closed(0.0, 1.0),
        "focal_length" => Range::open_low(0.0, 1.0),
        "focus_distance" => Range::open_low(0.0, 10_000.0),
        "sensor_width" => Range::open_low(0.0, 1.0),
        _ => return None,
    })
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn temporal_params(&self) -> TemporalParams {
        TemporalParams {
            alpha: self.alpha,
            alpha_motion: self.alpha_motion,
            ..TemporalParams::default()
        }
    }

    pub fn mask_params(&self) -> RayMaskParams {
        RayMaskParams {
            scale: self.scale,
            max_rays: self.max_rays,
        }
    }

    pub fn filter_params(&self) -> MainFilterParams {
        MainFilterParams::default()
    }

    pub fn reconstruct_params(&self) -> ReconstructParams {
        ReconstructParams::default()
    }

    pub fn composite_params(&self) -> CompositeParams {
        CompositeParams::default()
    }

    /// Every numeric parameter, for range checks and metadata echo.
    pub fn params(&self) -> BTreeMap<&'static str, f64> {
        let b = |v: bool| v as u8 as f64;
        let mut p = BTreeMap::new();
        p.insert("width", self.width as f64);
        p.insert("height", self.height as f64);
        p.insert("m", self.max_rays as f64);
        p.insert("s", self.scale as f64);
        if let Some(e) = self.epsilon_band {
            p.insert("epsilon_band", e);
        }
        p.insert("alpha", self.alpha as f64);
        p.insert("alpha_motion", self.alpha_motion as f64);
        p.insert("taa_blend", self.taa.blend as f64);
        p.insert("taa_sharp", b(self.taa.sharp));
        p.insert("taa_post", b(self.taa.post));
        p.insert("taa_final", b(self.taa.final_image));
        p.insert("seed", self.seed as f64);
        p.insert("workers", self.workers as f64);
        p.insert("gt_spp", self.gt_spp as f64);
        let lens = [
            ("aperture", self.lens.aperture),
            ("focal_length", self.lens.focal_length),
            ("focus_distance", self.lens.focus_distance),
            ("sensor_width", self.lens.sensor_width),
        ];
        for (k, v) in lens {
            if let Some(v) = v {
                p.insert(k, v);
            }
        }
        p
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, value) in self.params() {
            check(name, value)?;
        }
        if !(self.frame_dt > 0.0 && self.frame_dt.is_finite()) {
            return Err(ConfigError::OutOfRange {
                param: "frame_dt".into(),
                value: self.frame_dt,
                range: "(0, inf)".into(),
            });
        }
        Ok(())
    }

    /// Set one named parameter after checking its range.
    pub fn set_param(&mut self, name: &str, value: f64) -> Result<(), ConfigError> {
        check(name, value)?;
        match name {
            "width" => self.width = value as u32,
            "height" => self.height = value as u32,
            "m" => self.max_rays = value as u32,
            "s" => self.scale = value as f32,
            "epsilon_band" => self.epsilon_band = Some(value),
            "alpha" => self.alpha = value as f32,
            "alpha_motion" => self.alpha_motion = value as f32,
            "taa_blend" => self.taa.blend = value as f32,
            "taa_sharp" => self.taa.sharp = value != 0.0,
            "taa_post" => self.taa.post = value != 0.0,
            "taa_final" => self.taa.final_image = value != 0.0,
            "seed" => self.seed = value as u64,
            "workers" => self.workers = value as usize,
            "gt_spp" => self.gt_spp = value as u32,
            "aperture" => self.lens.aperture = Some(value),
            "focal_length" => self.lens.focal_length = Some(value),
            "focus_distance" => self.lens.focus_distance = Some(value),
            "sensor_width" => self.lens.sensor_width = Some(value),
            _ => unreachable!("checked above"),
        }
        Ok(())
    }
}

fn check(name: &str, value: f64) -> Result<(), ConfigError> {
    let range = range_of(name).ok_or_else(|| ConfigError::UnknownParam(name.to_string()))?;
    if range.contains(value) {
        Ok(())
    } else {
        Err(ConfigError::OutOfRange {
            param: name.to_string(),
            value,
            range: range.describe(),
        })
    }
}
