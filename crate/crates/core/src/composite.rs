//! Final full-resolution composite of the sharp, post-process and
//! ray-traced branches.
//!
//! Inside the zone of focus the sharp image is used, with a linear feather
//! on the CoC. In the near field the ray-traced color is favored except
//! where bokeh highlights dominate. In the far field the ray-traced color is
//! only blended in at low hit ratios, through `smoothstep(0, 0.3, h)`.

use std::f32::consts::SQRT_2;

use glam::{Vec2, Vec4};
use serde::{Deserialize, Serialize};

use crate::image::{upsample_half, Image, Rgb};
use crate::lens::ThinLensCamera;

/// Which branches reach the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Hybrid,
    PostOnly,
    RtOnly,
    GroundTruth,
    Sharp,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Hybrid, Mode::PostOnly, Mode::RtOnly, Mode::GroundTruth, Mode::Sharp];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Hybrid => "hybrid",
            Mode::PostOnly => "post-only",
            Mode::RtOnly => "rt-only",
            Mode::GroundTruth => "ground-truth",
            Mode::Sharp => "sharp",
        }
    }

    pub fn uses_rays(self) -> bool {
        matches!(self, Mode::Hybrid | Mode::RtOnly)
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode {s:?}; expected one of hybrid, post-only, rt-only, ground-truth, sharp"))
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `t²(3 − 2t)` with `t = clamp((x − e0)/(e1 − e0), 0, 1)`.
#[inline]
pub fn smoothstep(e0: f32, e1: f32, x: f32) -> f32 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeParams {
    /// CoC diameter (px) up to which the sharp image is used unblended.
    pub feather_start: f32,
    /// CoC diameter (px) from which the blurred branches are used alone.
    pub feather_end: f32,
    /// Hit ratio at which far-field blending reaches pure post-process.
    pub hit_ratio_edge: f32,
}

impl Default for CompositeParams {
    fn default() -> Self {
        Self {
            feather_start: SQRT_2,
            feather_end: 2.0 * SQRT_2,
            hit_ratio_edge: 0.3,
        }
    }
}

/// Weight of the sharp image for a CoC diameter.
#[inline]
pub fn sharp_weight(coc: f32, params: &CompositeParams) -> f32 {
    if coc <= params.feather_start {
        1.0
    } else if coc >= params.feather_end {
        0.0
    } else {
        1.0 - (coc - params.feather_start) / (params.feather_end - params.feather_start)
    }
}

/// Per-pixel inputs after upsampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeInputs {
    pub sharp: Rgb,
    pub post: Rgb,
    pub bokeh: f32,
    pub rt: Rgb,
    pub hit_ratio: f32,
    /// Fraction of the ray-traced branch that is backed by rays.
    pub rt_available: f32,
    pub coc: f32,
    pub near_field: bool,
}

/// Composite one pixel in hybrid mode.
pub fn composite_pixel(i: &CompositeInputs, params: &CompositeParams) -> Rgb {
    let k = if i.near_field {
        i.bokeh
    } else {
        smoothstep(0.0, params.hit_ratio_edge, i.hit_ratio)
    };
    let rt_mix = i.rt.lerp(i.post, k.clamp(0.0, 1.0));
    let blurred = i.post.lerp(rt_mix, i.rt_available.clamp(0.0, 1.0));
    blurred.lerp(i.sharp, sharp_weight(i.coc, params))
}

/// Half-res branch images handed to the compositor.
#[derive(Debug, Clone, Copy)]
pub struct Branches<'a> {
    pub post: &'a Image<Rgb>,
    pub bokeh: &'a Image<f32>,
    pub rt: Option<RtBranch<'a>>,
}

#[derive(Debug, Clone, Copy)]
pub struct RtBranch<'a> {
    pub color: &'a Image<Rgb>,
    pub hit_ratio: &'a Image<f32>,
    pub available: &'a Image<bool>,
}

/// Upsample the half-res branches and composite every pixel.
pub fn composite(
    sharp: &Image<Rgb>,
    depth: &Image<f32>,
    cam: &ThinLensCamera,
    branches: Branches,
    mode: Mode,
    params: &CompositeParams,
) -> Image<Rgb> {
    if matches!(mode, Mode::Sharp | Mode::GroundTruth) {
        return sharp.clone();
    }
    let (w, h) = sharp.dims();
    let post = upsample_half(branches.post, w, h);
    let bokeh = upsample_half(branches.bokeh, w, h);
    let rt = branches.rt.filter(|_| mode.uses_rays()).map(|rt| {
        let weighted = Image::from_fn(rt.color.width(), rt.color.height(), |x, y| {
            let a = rt.available.get(x, y) as u32 as f32;
            (rt.color.get(x, y) * a).extend(a)
        });
        let ratio = Image::from_fn(rt.color.width(), rt.color.height(), |x, y| {
            let a = rt.available.get(x, y) as u32 as f32;
            Vec2::new(rt.hit_ratio.get(x, y) * a, a)
        });
        (upsample_half(&weighted, w, h), upsample_half(&ratio, w, h))
    });
    let d = cam.focus_distance as f32;
    Image::par_from_fn(w, h, |x, y| {
        let z = depth.get(x, y);
        let (rt_color, hit_ratio, avail) = match &rt {
            Some((c, r)) => {
                let c: Vec4 = c.get(x, y);
                let r = r.get(x, y);
                if c.w > 0.0 {
                    (c.truncate() / c.w, r.x / r.y.max(1e-12), c.w)
                } else {
                    (Rgb::ZERO, 0.0, 0.0)
                }
            }
            None => (Rgb::ZERO, 0.0, 0.0),
        };
        let inputs = CompositeInputs {
            sharp: sharp.get(x, y),
            post: post.get(x, y),
            bokeh: bokeh.get(x, y),
            rt: rt_color,
            hit_ratio,
            rt_available: avail,
            coc: cam.coc_px(z as f64) as f32,
            near_field: z < d,
        };
        if mode == Mode::RtOnly && avail > 0.0 {
            let blurred = inputs.post.lerp(rt_color, avail);
            return blurred.lerp(inputs.sharp, sharp_weight(inputs.coc, params));
        }
        composite_pixel(&inputs, params)
    })
}
