//! Spatial reconstruction of the accumulated ray-trace image.
//!
//! The merged color is median filtered, reduced into a 4-level pyramid,
//! and gathered with a 49-tap circular kernel scaled by the accumulated
//! CoC. The result is blended back by `b = clamp(σ²·2000, 0, 0.9)`.
//! Pixels without ray-traced data never contribute.

use glam::{Vec2, Vec4};

use crate::image::{Image, Rgb};
use crate::postprocess::{med9, ring_offsets};
use crate::temporal::AccumOutput;

pub const MIP_LEVELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructParams {
    /// Pyramid level per full-res pixel of CoC.
    pub lod_scale: f32,
    pub variance_weight: f32,
    pub max_blend: f32,
}

impl Default for ReconstructParams {
    fn default() -> Self {
        Self {
            lod_scale: 0.05,
            variance_weight: 2000.0,
            max_blend: 0.9,
        }
    }
}

/// `clamp(c_t · scale, 0, 3)`.
#[inline]
pub fn lod_for(coc: f32, scale: f32) -> f32 {
    (coc * scale).clamp(0.0, (MIP_LEVELS - 1) as f32)
}

/// Reconstruction blend weight from variance.
#[inline]
pub fn blend_weight(variance: f32, params: &ReconstructParams) -> f32 {
    (variance * params.variance_weight).clamp(0.0, params.max_blend)
}

/// 2×2 box pyramid; level 0 is the input, sizes halve rounding up.
pub fn build_mips<T>(img: &Image<T>) -> Vec<Image<T>>
where
    T: crate::image::Lerp + Send + Sync + Default,
{
    let mut levels = vec![img.clone()];
    for _ in 1..MIP_LEVELS {
        let prev = levels.last().unwrap();
        let (w, h) = prev.dims();
        let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
        let next = Image::par_from_fn(nw, nh, |x, y| {
            let mut acc = T::zero();
            let mut n = 0.0f32;
            for sy in 2 * y..(2 * y + 2).min(h) {
                for sx in 2 * x..(2 * x + 2).min(w) {
                    acc = acc.add(prev.get(sx, sy));
                    n += 1.0;
                }
            }
            acc.scaled(1.0 / n)
        });
        levels.push(next);
    }
    levels
}

/// Trilinear pyramid fetch at level-0 pixel coordinates.
pub fn sample_mips<T: crate::image::Lerp>(mips: &[Image<T>], x: f32, y: f32, lod: f32) -> T {
    let lod = lod.clamp(0.0, (mips.len() - 1) as f32);
    let l0 = lod.floor() as usize;
    let l1 = (l0 + 1).min(mips.len() - 1);
    let t = lod - l0 as f32;
    let at = |l: usize| {
        let s = (1u32 << l) as f32;
        mips[l].sample_bilinear((x + 0.5) / s - 0.5, (y + 0.5) / s - 0.5)
    };
    let a = at(l0);
    if t == 0.0 || l0 == l1 {
        a
    } else {
        a.lerp_to(at(l1), t)
    }
}

fn lower_median(v: &mut [f32]) -> f32 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[(v.len() - 1) / 2]
}

/// 3×3 median over available pixels only; unavailable pixels pass through.
pub fn masked_median3x3(img: &Image<Rgb>, available: &Image<bool>) -> Image<Rgb> {
    Image::par_from_fn(img.width(), img.height(), |x, y| {
        if !available.get(x, y) {
            return img.get(x, y);
        }
        let mut vals = [Rgb::ZERO; 9];
        let mut n = 0;
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let (sx, sy) = (x as i64 + dx, y as i64 + dy);
                let (cx, cy) = (
                    sx.clamp(0, img.width() as i64 - 1),
                    sy.clamp(0, img.height() as i64 - 1),
                );
                if available.get(cx as usize, cy as usize) {
                    vals[n] = img.get(cx as usize, cy as usize);
                    n += 1;
                }
            }
        }
        if n == 9 {
            return Rgb::new(med9(vals.map(|c| c.x)), med9(vals.map(|c| c.y)), med9(vals.map(|c| c.z)));
        }
        let ch = |f: fn(&Rgb) -> f32| {
            let mut c: Vec<f32> = vals[..n].iter().map(f).collect();
            lower_median(&mut c)
        };
        Rgb::new(ch(|c| c.x), ch(|c| c.y), ch(|c| c.z))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconOutput {
    pub color: Image<Rgb>,
    pub hit_ratio: Image<f32>,
    /// Blend weight `b` per pixel.
    pub blend: Image<f32>,
}

/// Circular gather over the pyramid. `coc` holds full-res CoC diameters;
/// the kernel radius is the matching half-res radius.
pub fn gather_reconstruct(
    color: &Image<Rgb>,
    coc: &Image<f32>,
    variance: &Image<f32>,
    hit_ratio: &Image<f32>,
    available: &Image<bool>,
    params: &ReconstructParams,
) -> ReconOutput {
    let (w, h) = color.dims();
    let weighted = Image::from_fn(w, h, |x, y| {
        let a = available.get(x, y) as u32 as f32;
        (color.get(x, y) * a).extend(a)
    });
    let mips = build_mips(&weighted);
    let ratio_mips = build_mips(&Image::from_fn(w, h, |x, y| {
        let a = available.get(x, y) as u32 as f32;
        Vec2::new(hit_ratio.get(x, y) * a, a)
    }));
    let taps = ring_offsets(3);

    let out = Image::par_from_fn(w, h, |x, y| {
        let orig = color.get(x, y);
        let h0 = hit_ratio.get(x, y);
        let b = blend_weight(variance.get(x, y), params);
        if b == 0.0 || !available.get(x, y) {
            return (orig, h0, 0.0);
        }
        let ct = coc.get(x, y);
        let radius = ct * 0.25;
        let lod = lod_for(ct, params.lod_scale);
        let mut acc = Vec4::ZERO;
        let mut hacc = Vec2::ZERO;
        let mut n = 0.0f32;
        for o in &taps {
            let off = *o * radius;
            let dist = off.length();
            let (sx, sy) = (x as f32 + off.x, y as f32 + off.y);
            let (nx, ny) = (sx.round() as i64, sy.round() as i64);
            if !coc.in_bounds(nx, ny) || !available.get(nx as usize, ny as usize) {
                continue;
            }
            if dist > 0.0 && coc.get(nx as usize, ny as usize) * 0.25 < dist {
                continue;
            }
            let c = sample_mips(&mips, sx, sy, lod);
            let r = sample_mips(&ratio_mips, sx, sy, lod);
            if c.w <= 0.0 {
                continue;
            }
            acc += c / c.w;
            hacc += Vec2::new(r.x / r.y.max(1e-12), 1.0);
            n += 1.0;
        }
        if n == 0.0 {
            return (orig, h0, 0.0);
        }
        let gathered = acc.truncate() / n;
        let gh = hacc.x / n;
        (orig.lerp(gathered, b), h0 + (gh - h0) * b, b)
    });
    ReconOutput {
        color: out.map(|o| o.0),
        hit_ratio: out.map(|o| o.1.clamp(0.0, 1.0)),
        blend: out.map(|o| o.2),
    }
}

/// Median, then gather, on one frame's accumulation output.
pub fn reconstruct(accum: &AccumOutput, variance: &Image<f32>, params: &ReconstructParams) -> ReconOutput {
    let filtered = masked_median3x3(&accum.merged, &accum.available);
    gather_reconstruct(&filtered, &accum.coc, variance, &accum.hit_ratio, &accum.available, params)
}
