//! Adaptive ray mask: per half-res pixel ray counts from G-buffer edge
//! strength and the temporally accumulated luminance variance.
//!
//! ```text
//! x   = (δd + δn) · s
//! x_n = saturate(1 − 1/(x + 1))
//! x_f = saturate(x_n + σ² · 100000) · m
//! ```
//!
//! The count is `x_f` rounded half-up, at least one in the near field.

use glam::Vec3;

use crate::image::{gaussian_blur5, half_dims, Image};
use crate::lens::{Field, ThinLensCamera};
use crate::visibility::GBuffer;

/// Depth substituted for background pixels before edge detection, meters.
pub const BACKGROUND_DEPTH: f32 = 100.0;

/// Variance weight inside the saturate.
pub const VARIANCE_WEIGHT: f32 = 100_000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayMaskParams {
    /// Edge response scale `s`.
    pub scale: f32,
    /// Ray budget `m` per half-res pixel.
    pub max_rays: u32,
}

impl Default for RayMaskParams {
    fn default() -> Self {
        Self {
            scale: 0.8,
            max_rays: 10,
        }
    }
}

/// Smoothed geometry channels that feed the Sobel operator.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredGeometry {
    pub depth: Image<f32>,
    pub normal: Image<Vec3>,
}

/// 5×5 Gaussian (σ = 1) over depth and each normal component.
pub fn blur_gbuffer(gbuffer: &GBuffer) -> FilteredGeometry {
    let depth = gbuffer.pixels.map(|p| if p.depth.is_finite() { p.depth } else { BACKGROUND_DEPTH });
    FilteredGeometry {
        depth: gaussian_blur5(&depth),
        normal: gaussian_blur5(&gbuffer.normals()),
    }
}

/// 2×2 box reduction of the filtered channels.
pub fn downscale_geometry(g: &FilteredGeometry) -> FilteredGeometry {
    let (w, h) = g.depth.dims();
    let (hw, hh) = half_dims(w, h);
    let reduce = |x: usize, y: usize| {
        let (mut d, mut n, mut k) = (0.0f32, Vec3::ZERO, 0.0f32);
        for sy in 2 * y..(2 * y + 2).min(h) {
            for sx in 2 * x..(2 * x + 2).min(w) {
                d += g.depth.get(sx, sy);
                n += g.normal.get(sx, sy);
                k += 1.0;
            }
        }
        (d / k, n / k)
    };
    let both = Image::par_from_fn(hw, hh, reduce);
    FilteredGeometry {
        depth: both.map(|b| b.0),
        normal: both.map(|b| b.1),
    }
}

const SOBEL_DERIV: [f32; 5] = [1.0, 2.0, 0.0, -2.0, -1.0];
const SOBEL_SMOOTH: [f32; 5] = [1.0, 4.0, 6.0, 4.0, 1.0];

/// 5×5 Sobel gradient `(Gx, Gy)` of a scalar channel, clamp-to-edge.
pub fn sobel5(img: &Image<f32>, x: usize, y: usize) -> (f32, f32) {
    let (mut gx, mut gy) = (0.0f32, 0.0f32);
    for j in 0..5 {
        for i in 0..5 {
            let v = img.get_clamped(x as i64 + i as i64 - 2, y as i64 + j as i64 - 2);
            gx += SOBEL_DERIV[i] * SOBEL_SMOOTH[j] * v;
            gy += SOBEL_SMOOTH[i] * SOBEL_DERIV[j] * v;
        }
    }
    (gx, gy)
}

/// Edge responses `(δd, δn)` per pixel of the given buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeStrength {
    pub depth: Image<f32>,
    pub normal: Image<f32>,
}

pub fn edge_strength(g: &FilteredGeometry) -> EdgeStrength {
    let (w, h) = g.depth.dims();
    let comps: [Image<f32>; 3] = [g.normal.map(|n| n.x), g.normal.map(|n| n.y), g.normal.map(|n| n.z)];
    let both = Image::par_from_fn(w, h, |x, y| {
        let (gx, gy) = sobel5(&g.depth, x, y);
        let dd = (gx * gx + gy * gy).sqrt();
        let dn: f32 = comps
            .iter()
            .map(|c| {
                let (gx, gy) = sobel5(c, x, y);
                (gx * gx + gy * gy).sqrt()
            })
            .sum();
        (dd, dn)
    });
    EdgeStrength {
        depth: both.map(|b| b.0),
        normal: both.map(|b| b.1),
    }
}

#[inline]
fn saturate(v: f32) -> f32 {
    v.clamp(0.0, 1.0)
}

/// Real-valued ray demand `x_f` in `[0, m]`.
pub fn ray_demand(delta_d: f32, delta_n: f32, scale: f32, variance: f32, max_rays: u32) -> f32 {
    let x = (delta_d + delta_n) * scale;
    let xn = saturate(1.0 - 1.0 / (x + 1.0));
    saturate(xn + variance * VARIANCE_WEIGHT) * max_rays as f32
}

/// Integer ray count for one pixel.
pub fn ray_count(delta_d: f32, delta_n: f32, scale: f32, variance: f32, max_rays: u32, near_field: bool) -> u32 {
    if max_rays == 0 {
        return 0;
    }
    let xf = ray_demand(delta_d, delta_n, scale, variance, max_rays);
    let n = ((xf + 0.5).floor() as u32).min(max_rays);
    if near_field {
        n.max(1)
    } else {
        n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayMask {
    pub counts: Image<u32>,
    pub params: RayMaskParams,
}

impl RayMask {
    pub fn zeros(width: usize, height: usize, params: RayMaskParams) -> Self {
        Self {
            counts: Image::filled(width, height, 0),
            params,
        }
    }

    pub fn total_rays(&self) -> u64 {
        self.counts.pixels().iter().map(|&c| c as u64).sum()
    }

    /// Counts over `m` as a grayscale image.
    pub fn visualize(&self) -> Image<f32> {
        let m = self.params.max_rays.max(1) as f32;
        self.counts.map(|c| c as f32 / m)
    }
}

/// Build the half-res mask. `half_depth` is the min-reduced depth used for
/// the near-field test; `variance` is last frame's blurred σ² at half res.
pub fn build_ray_mask(
    gbuffer: &GBuffer,
    half_depth: &Image<f32>,
    variance: &Image<f32>,
    cam: &ThinLensCamera,
    params: RayMaskParams,
) -> RayMask {
    let edges = edge_strength(&downscale_geometry(&blur_gbuffer(gbuffer)));
    let (w, h) = half_depth.dims();
    let counts = Image::par_from_fn(w, h, |x, y| {
        let near = cam.classify_field(half_depth.get(x, y) as f64) == Field::Near;
        ray_count(
            edges.depth.get(x, y),
            edges.normal.get(x, y),
            params.scale,
            variance.get(x, y),
            params.max_rays,
            near,
        )
    });
    RayMask { counts, params }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use proptest::prelude::*;

    fn geometry(depth: Image<f32>) -> FilteredGeometry {
        let (w, h) = depth.dims();
        FilteredGeometry {
            depth,
            normal: Image::filled(w, h, Vec3::Z),
        }
    }

    #[test]
    fn constant_inputs_have_no_edges() {
        let e = edge_strength(&geometry(Image::filled(12, 9, 2.5)));
        assert!(e.depth.pixels().iter().all(|&v| v == 0.0));
        assert!(e.normal.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_step_matches_hand_convolution() {
        // Depth 0 for x < 6, 1 from x = 6.
        let step = Image::from_fn(12, 9, |x, _| if x >= 6 { 1.0 } else { 0.0 });
        let e = edge_strength(&geometry(step));
        // Row weights sum to 16; column partial sums are 3, 3, 1 next to the step.
        assert_eq!(e.depth.get(6, 4), 48.0);
        assert_eq!(e.depth.get(5, 4), 48.0);
        assert_eq!(e.depth.get(4, 4), 16.0);
        assert_eq!(e.depth.get(7, 4), 16.0);
        assert_eq!(e.depth.get(2, 4), 0.0);
    }

    #[test]
    fn blur_preserves_constant_depth_and_impulse_mass() {
        use crate::visibility::{GBuffer, GPixel};
        let mut pixels = Image::filled(
            15,
            15,
            GPixel {
                depth: 2.0,
                normal: Vec3::Z,
                ..Default::default()
            },
        );
        let flat = blur_gbuffer(&GBuffer {
            pixels: pixels.clone(),
            jitter: glam::Vec2::ZERO,
        });
        assert!(flat.depth.pixels().iter().all(|&d| (d - 2.0).abs() < 1e-6));
        let mut p = pixels.get(7, 7);
        p.depth = 3.0;
        pixels.set(7, 7, p);
        let spike = blur_gbuffer(&GBuffer {
            pixels,
            jitter: glam::Vec2::ZERO,
        });
        let excess: f32 = spike.depth.pixels().iter().map(|d| d - 2.0).sum();
        assert!((excess - 1.0).abs() < 1e-3, "{excess}");
    }

    #[test]
    fn blur_reduces_stairstep_energy_along_diagonal() {
        let slope = 0.37f32;
        let depth = Image::from_fn(64, 48, |x, y| if (y as f32) < slope * x as f32 + 10.0 { 1.0 } else { 2.0 });
        let along_edge = |img: &Image<f32>| {
            let e = edge_strength(&geometry(img.clone()));
            let v: Vec<f32> = (8..56)
                .map(|x| e.depth.get(x, (slope * x as f32 + 10.0).round() as usize))
                .collect();
            let mean = v.iter().sum::<f32>() / v.len() as f32;
            let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f32>() / v.len() as f32;
            var / (mean * mean)
        };
        let raw = along_edge(&depth);
        let smooth = along_edge(&gaussian_blur5(&depth));
        assert!(smooth < raw, "{smooth} !< {raw}");
    }

    #[test]
    fn ray_count_examples() {
        assert_eq!(ray_count(0.0, 0.0, 0.8, 0.0, 10, false), 0);
        assert_eq!(ray_count(0.0, 0.0, 0.8, 0.0, 10, true), 1);
        // x = 1 gives x_n = 0.5; σ² = 1e-5 adds 1.0 before saturation.
        assert_eq!(ray_demand(1.25, 0.0, 0.8, 1e-5, 10), 10.0);
        assert_eq!(ray_count(1.25, 0.0, 0.8, 1e-5, 10, false), 10);
        assert_eq!(ray_count(1.25, 0.0, 0.8, 0.0, 10, false), 5);
        assert_eq!(ray_count(5.0, 5.0, 0.8, 1.0, 0, true), 0);
    }

    #[test]
    fn rounding_is_half_up() {
        // x_n = 0.25 with x = 1/3; demand 2.5 rays at m = 10.
        let d = 1.0 / 3.0 / 0.8;
        assert!((ray_demand(d, 0.0, 0.8, 0.0, 10) - 2.5).abs() < 1e-5);
        assert_eq!(ray_count(d + 1e-5, 0.0, 0.8, 0.0, 10, false), 3);
    }

    proptest! {
        #[test]
        fn count_bounded_and_monotone_in_variance(
            dd in 0.0f32..100.0, dn in 0.0f32..10.0, s in 0.0f32..=1.0,
            v1 in 0.0f32..1e-4, v2 in 0.0f32..1e-4, m in 1u32..40, near: bool,
        ) {
            let (lo, hi) = if v1 <= v2 { (v1, v2) } else { (v2, v1) };
            let a = ray_count(dd, dn, s, lo, m, near);
            let b = ray_count(dd, dn, s, hi, m, near);
            prop_assert!(a <= m && b <= m);
            prop_assert!(a <= b);
            if near { prop_assert!(a >= 1); }
        }

        #[test]
        fn demand_monotone_in_edges(e1 in 0.0f32..50.0, e2 in 0.0f32..50.0, v in 0.0f32..1e-5) {
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            prop_assert!(ray_demand(lo, 0.0, 0.8, v, 10) <= ray_demand(hi, 0.0, 0.8, v, 10));
        }
    }
}
