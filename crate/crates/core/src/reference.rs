//! Ground-truth rendering and image metrics.

use std::time::Duration;

use glam::Vec3;
use serde::{Deserialize, Serialize};

use crate::image::{Image, Rgb};
use crate::lens::ThinLensCamera;
use crate::rtdof::{stream_rng, LensSampler, RAY_EPSILON};
use crate::scene::{Bvh, Ray, Scene};

/// Stream id reserved for ground-truth rendering so it never shares random
/// numbers with a real-time frame.
const GROUND_TRUTH_FRAME: u64 = u64::MAX;

/// Brute-force thin-lens render with `spp` stratified lens samples per
/// pixel, all aimed at the pixel center's point on the focus plane.
pub fn ground_truth_dof(scene: &Scene, bvh: &Bvh, cam: &ThinLensCamera, spp: u32, seed: u64) -> Image<Rgb> {
    let (w, h) = (cam.image_width as usize, cam.image_height as usize);
    let spp = spp.max(1) as usize;
    Image::par_from_fn(w, h, |x, y| {
        let mut rng = stream_rng(seed, GROUND_TRUTH_FRAME, (y * w + x) as u64);
        let sampler = LensSampler::new(spp, cam.aperture, &mut rng);
        let focus = cam.unproject(x as f64 + 0.5, y as f64 + 0.5, cam.focus_distance);
        let mut sum = Vec3::ZERO;
        for i in 0..spp {
            let l = sampler.sample(i);
            let origin = cam.pose.position + cam.pose.right * l.x + cam.pose.up * l.y;
            let ray = Ray::new(origin, focus - origin, RAY_EPSILON, f64::INFINITY);
            sum += match bvh.intersect(scene, &ray) {
                Some(hit) => hit.shaded,
                None => scene.background,
            };
        }
        sum / spp as f32
    })
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("image sizes differ: {0:?} vs {1:?}")]
    SizeMismatch((usize, usize), (usize, usize)),
    #[error("image {0:?} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")]
    TooSmall((usize, usize)),
}

fn same_dims<T: Copy, U: Copy>(a: &Image<T>, b: &Image<U>) -> Result<(), MetricError> {
    if a.dims() == b.dims() {
        Ok(())
    } else {
        Err(MetricError::SizeMismatch(a.dims(), b.dims()))
    }
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Mean SSIM of two single-channel images over all fully covered windows
/// (11×11 Gaussian, σ = 1.5, unbiased local variances).
pub fn ssim_channel(a: &Image<f32>, b: &Image<f32>, data_range: f64) -> Result<f64, MetricError> {
    same_dims(a, b)?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricError::TooSmall((w, h)));
    }
    let g = gaussian_window();
    let (c1, c2) = ((SSIM_K1 * data_range).powi(2), (SSIM_K2 * data_range).powi(2));
    let np = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let cov_norm = np / (np - 1.0);

    // Separable filtering of the five moment images, valid region only.
    let moments = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        let ow = w - SSIM_WINDOW + 1;
        let oh = h - SSIM_WINDOW + 1;
        let mut rows = vec![0.0; ow * h];
        for y in 0..h {
            for x in 0..ow {
                let mut s = 0.0;
                for (k, gk) in g.iter().enumerate() {
                    s += gk * f(a.get(x + k, y) as f64, b.get(x + k, y) as f64);
                }
                rows[y * ow + x] = s;
            }
        }
        let mut out = vec![0.0; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                let mut s = 0.0;
                for (k, gk) in g.iter().enumerate() {
                    s += gk * rows[(y + k) * ow + x];
                }
                out[y * ow + x] = s;
            }
        }
        out
    };
    let ux = moments(&|p, _| p);
    let uy = moments(&|_, q| q);
    let uxx = moments(&|p, _| p * p);
    let uyy = moments(&|_, q| q * q);
    let uxy = moments(&|p, q| p * q);

    let mut total = 0.0;
    for i in 0..ux.len() {
        let vx = cov_norm * (uxx[i] - ux[i] * ux[i]);
        let vy = cov_norm * (uyy[i] - uy[i] * uy[i]);
        let vxy = cov_norm * (uxy[i] - ux[i] * uy[i]);
        let num = (2.0 * ux[i] * uy[i] + c1) * (2.0 * vxy + c2);
        let den = (ux[i] * ux[i] + uy[i] * uy[i] + c1) * (vx + vy + c2);
        total += num / den;
    }
    Ok(total / ux.len() as f64)
}

/// SSIM averaged over the RGB channels, data range 1.
pub fn ssim(a: &Image<Rgb>, b: &Image<Rgb>) -> Result<f64, MetricError> {
    let mut sum = 0.0;
    for c in 0..3 {
        sum += ssim_channel(&a.map(|p| p[c]), &b.map(|p| p[c]), 1.0)?;
    }
    Ok(sum / 3.0)
}

pub fn mse(a: &Image<Rgb>, b: &Image<Rgb>) -> Result<f64, MetricError> {
    same_dims(a, b)?;
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(p, q)| {
            let d = (*p - *q).as_dvec3();
            d.length_squared()
        })
        .sum();
    Ok(sum / (3 * a.len()) as f64)
}

/// Peak signal-to-noise ratio in dB for a peak of 1. Identical images give `+∞`.
pub fn psnr(a: &Image<Rgb>, b: &Image<Rgb>) -> Result<f64, MetricError> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

/// Wall-clock time of each pass of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PassTimings {
    pub visibility: Duration,
    pub post_process: Duration,
    pub gbuffer_blur: Duration,
    pub ray_trace: Duration,
    pub accumulation: Duration,
    pub median: Duration,
    pub recon_composite: Duration,
    pub taa: Duration,
    pub total: Duration,
}

impl PassTimings {
    pub const NAMES: [&'static str; 9] = [
        "visibility",
        "post_process",
        "gbuffer_blur",
        "ray_trace",
        "accumulation",
        "median",
        "recon_composite",
        "taa",
        "total",
    ];

    pub fn rows(&self) -> [(&'static str, Duration); 9] {
        [
            ("visibility", self.visibility),
            ("post_process", self.post_process),
            ("gbuffer_blur", self.gbuffer_blur),
            ("ray_trace", self.ray_trace),
            ("accumulation", self.accumulation),
            ("median", self.median),
            ("recon_composite", self.recon_composite),
            ("taa", self.taa),
            ("total", self.total),
        ]
    }

    pub fn fps(&self) -> f64 {
        let s = self.total.as_secs_f64();
        if s > 0.0 {
            1.0 / s
        } else {
            f64::INFINITY
        }
    }

    /// Per-pass mean over several frames.
    pub fn mean(frames: &[PassTimings]) -> PassTimings {
        if frames.is_empty() {
            return PassTimings::default();
        }
        let n = frames.len() as u32;
        let avg = |f: fn(&PassTimings) -> Duration| frames.iter().map(f).sum::<Duration>() / n;
        PassTimings {
            visibility: avg(|t| t.visibility),
            post_process: avg(|t| t.post_process),
            gbuffer_blur: avg(|t| t.gbuffer_blur),
            ray_trace: avg(|t| t.ray_trace),
            accumulation: avg(|t| t.accumulation),
            median: avg(|t| t.median),
            recon_composite: avg(|t| t.recon_composite),
            taa: avg(|t| t.taa),
            total: avg(|t| t.total),
        }
    }

    /// Plain-text table in milliseconds.
    pub fn table(&self) -> String {
        let mut s = String::from("pass              ms\n");
        for (name, d) in self.rows() {
            s.push_str(&format!("{name:<16} {:>8.3}\n", d.as_secs_f64() * 1e3));
        }
        s.push_str(&format!("{:<16} {:>8.2}\n", "fps", self.fps()));
        s
    }
}
