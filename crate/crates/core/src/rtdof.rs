//! Distributed ray-traced depth of field inside the ray mask.
//!
//! Each masked half-res pixel shoots `count` rays from stratified points on
//! the aperture toward the point where its pinhole ray meets the focus
//! plane. Hits are split into near and far fields by depth, which yields
//! the colors needed behind foreground silhouettes.

use glam::{DVec2, DVec3, Vec3, Vec4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{Image, Rgb};
use crate::lens::{field_split_weight, ThinLensCamera};
use crate::raymask::{RayMask, BACKGROUND_DEPTH};
use crate::scene::{Bvh, Ray, Scene};

/// Self-intersection offset for lens rays, meters.
pub const RAY_EPSILON: f64 = 1e-4;

/// Deterministic per-stream generator from `(seed, frame, index)`.
pub fn stream_rng(seed: u64, frame: u64, index: u64) -> ChaCha8Rng {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [frame, index] {
        h = splitmix64(h ^ v.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Shirley–Chiu concentric map from the unit square to the unit disk.
pub fn concentric_disk(u: f64, v: f64) -> DVec2 {
    let a = 2.0 * u - 1.0;
    let b = 2.0 * v - 1.0;
    if a == 0.0 && b == 0.0 {
        return DVec2::ZERO;
    }
    let (r, phi) = if a.abs() > b.abs() {
        (a, std::f64::consts::FRAC_PI_4 * (b / a))
    } else {
        (b, std::f64::consts::FRAC_PI_2 - std::f64::consts::FRAC_PI_4 * (a / b))
    };
    DVec2::new(r * phi.cos(), r * phi.sin())
}

/// Latin-hypercube stratified points on the aperture disk.
#[derive(Debug, Clone)]
pub struct LensSampler {
    points: Vec<DVec2>,
}

impl LensSampler {
    /// `total` samples on a disk of diameter `aperture`.
    pub fn new(total: usize, aperture: f64, rng: &mut impl Rng) -> Self {
        let mut perm: Vec<usize> = (0..total).collect();
        perm.shuffle(rng);
        let n = total as f64;
        let radius = aperture * 0.5;
        let points = (0..total)
            .map(|i| {
                let u = (i as f64 + rng.gen::<f64>()) / n;
                let v = (perm[i] as f64 + rng.gen::<f64>()) / n;
                concentric_disk(u, v) * radius
            })
            .collect();
        Self { points }
    }

    pub fn sample(&self, index: usize) -> DVec2 {
        self.points[index]
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// One lens sample of a `total`-sample pattern drawn from `rng`.
pub fn lens_sample(index: usize, total: usize, aperture: f64, rng: &mut impl Rng) -> DVec2 {
    LensSampler::new(total, aperture, rng).sample(index)
}

/// Ray-traced near/far fields of one half-res pixel. Colors are
/// premultiplied by their share of the rays; alpha is that share.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldColor {
    pub near: Vec4,
    pub far: Vec4,
    /// Near-field share of this frame's rays.
    pub hit_ratio: f32,
    /// Mean CoC diameter (full-res px) of near-weighted hits.
    pub near_coc: f32,
    pub far_coc: f32,
    pub far_world: Option<DVec3>,
    pub rays: u32,
}

impl FieldColor {
    pub fn is_empty(&self) -> bool {
        self.rays == 0
    }

    /// Monte-Carlo estimate of the pixel color over all rays.
    pub fn total(&self) -> Rgb {
        self.near.truncate() + self.far.truncate()
    }

    /// Mean near color (not premultiplied), zero without near rays.
    pub fn near_color(&self) -> Rgb {
        unpremultiply(self.near)
    }

    pub fn far_color(&self) -> Rgb {
        unpremultiply(self.far)
    }
}

#[inline]
pub fn unpremultiply(c: Vec4) -> Rgb {
    if c.w > 0.0 {
        c.truncate() / c.w
    } else {
        Vec3::ZERO
    }
}

/// Shared inputs for tracing a frame.
#[derive(Debug, Clone, Copy)]
pub struct TraceContext<'a> {
    pub scene: &'a Scene,
    pub bvh: &'a Bvh,
    pub cam: &'a ThinLensCamera,
    /// Near/far transition half-width around the focus plane, meters.
    pub band: f64,
    /// Subpixel projection offset of this frame.
    pub jitter: glam::Vec2,
    pub seed: u64,
    pub frame: u64,
}

/// Trace `count` lens rays for the continuous full-res pixel position
/// `(px, py)`.
pub fn trace_point(ctx: &TraceContext, px: f64, py: f64, count: u32, rng: &mut impl Rng) -> FieldColor {
    if count == 0 {
        return FieldColor::default();
    }
    let cam = ctx.cam;
    let d = cam.focus_distance;
    let focus = cam.unproject(px, py, d);
    let sampler = LensSampler::new(count as usize, cam.aperture, rng);
    let pose = &cam.pose;

    let (mut near, mut far) = (Vec3::ZERO, Vec3::ZERO);
    let (mut wn, mut wf) = (0.0f64, 0.0f64);
    let (mut coc_n, mut coc_f) = (0.0f64, 0.0f64);
    let mut far_pos = DVec3::ZERO;
    for i in 0..count as usize {
        let l = sampler.sample(i);
        let origin = pose.position + pose.right * l.x + pose.up * l.y;
        let ray = Ray::new(origin, focus - origin, RAY_EPSILON, f64::INFINITY);
        let (color, z, pos) = match ctx.bvh.intersect(ctx.scene, &ray) {
            Some(hit) => (hit.shaded, cam.view_depth(hit.world_pos), hit.world_pos),
            None => {
                let along = BACKGROUND_DEPTH as f64 / ray.direction.dot(pose.forward).max(1e-6);
                (ctx.scene.background, f64::INFINITY, ray.at(along))
            }
        };
        let w = field_split_weight(z, d, ctx.band);
        let coc = cam.coc_px(z);
        near += color * w as f32;
        far += color * (1.0 - w) as f32;
        wn += w;
        wf += 1.0 - w;
        coc_n += w * coc;
        coc_f += (1.0 - w) * coc;
        far_pos += pos * (1.0 - w);
    }
    let n = count as f64;
    let inv = 1.0 / count as f32;
    FieldColor {
        near: (near * inv).extend((wn / n) as f32),
        far: (far * inv).extend((wf / n) as f32),
        hit_ratio: (wn / n) as f32,
        near_coc: if wn > 0.0 { (coc_n / wn) as f32 } else { 0.0 },
        far_coc: if wf > 0.0 { (coc_f / wf) as f32 } else { 0.0 },
        far_world: (wf > 0.0).then(|| far_pos / wf),
        rays: count,
    }
}

/// Continuous full-res position addressed by half-res pixel `(hx, hy)`.
#[inline]
pub fn half_res_center(hx: usize, hy: usize, jitter: glam::Vec2) -> (f64, f64) {
    (
        2.0 * hx as f64 + 1.0 + jitter.x as f64,
        2.0 * hy as f64 + 1.0 + jitter.y as f64,
    )
}

/// Trace one half-res pixel with its own deterministic stream.
pub fn trace_pixel(ctx: &TraceContext, hx: usize, hy: usize, count: u32) -> FieldColor {
    let (px, py) = half_res_center(hx, hy, ctx.jitter);
    let half_width = (ctx.cam.image_width as usize).div_ceil(2);
    let mut rng = stream_rng(ctx.seed, ctx.frame, (hy * half_width + hx) as u64);
    trace_point(ctx, px, py, count, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RayStats {
    pub total_rays: u64,
    /// Pixel count per ray count `0..=m`.
    pub histogram: Vec<u64>,
}

pub fn trace_frame(ctx: &TraceContext, mask: &RayMask) -> (Image<FieldColor>, RayStats) {
    let (w, h) = mask.counts.dims();
    let fields = Image::par_from_fn(w, h, |x, y| trace_pixel(ctx, x, y, mask.counts.get(x, y)));
    let mut histogram = vec![0u64; mask.params.max_rays as usize + 1];
    for &c in mask.counts.pixels() {
        if let Some(slot) = histogram.get_mut(c as usize) {
            *slot += 1;
        }
    }
    let stats = RayStats {
        total_rays: mask.total_rays(),
        histogram,
    };
    (fields, stats)
}
