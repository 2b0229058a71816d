//! Gather-based post-process depth of field at half resolution.
//!
//! The chain is: 2×2 downscale, tile CoC max with 3×3 tile dilation, a
//! 9-tap bilateral prefilter, the 81-tap main filter that splits samples
//! into foreground and background sums, and a 3×3 median.
//!
//! CoC values in this module are radii in half-resolution pixels.

use std::f32::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use glam::{Vec2, Vec3, Vec4};

use crate::image::{half_dims, Image, Rgb};
use crate::lens::ThinLensCamera;
use crate::visibility::GBuffer;

/// Half-res pixels per tile side.
pub const TILE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct HalfResLayer {
    pub color: Image<Rgb>,
    /// CoC radius in half-res pixels.
    pub coc: Image<f32>,
    pub depth: Image<f32>,
    /// Brightest emission in the 2×2 footprint.
    pub specular: Image<f32>,
}

impl HalfResLayer {
    pub fn width(&self) -> usize {
        self.color.width()
    }

    pub fn height(&self) -> usize {
        self.color.height()
    }
}

/// Full-res CoC diameter to half-res radius.
#[inline]
pub fn half_res_radius(diameter_px: f64) -> f32 {
    (diameter_px * 0.25) as f32
}

/// 2×2 reduction: box-averaged color, min depth, max specular. The CoC is
/// recomputed from the kept depth.
pub fn downscale_half(sharp: &Image<Rgb>, gbuffer: &GBuffer, cam: &ThinLensCamera) -> HalfResLayer {
    let (w, h) = sharp.dims();
    let (hw, hh) = half_dims(w, h);
    let blocks = Image::par_from_fn(hw, hh, |x, y| {
        let mut color = Vec3::ZERO;
        let mut n = 0.0f32;
        let mut depth = f32::INFINITY;
        let mut spec = 0.0f32;
        for sy in 2 * y..(2 * y + 2).min(h) {
            for sx in 2 * x..(2 * x + 2).min(w) {
                color += sharp.get(sx, sy);
                n += 1.0;
                let g = gbuffer.get(sx, sy);
                depth = depth.min(g.depth);
                spec = spec.max(g.specular);
            }
        }
        let coc = half_res_radius(cam.coc_px(depth as f64));
        (color / n, depth, spec, coc)
    });
    HalfResLayer {
        color: blocks.map(|b| b.0),
        depth: blocks.map(|b| b.1),
        specular: blocks.map(|b| b.2),
        coc: blocks.map(|b| b.3),
    }
}

/// Per-tile maximum CoC radius, dilated over the 3×3 tile neighborhood.
#[derive(Debug, Clone, PartialEq)]
pub struct TileCocMax {
    pub tiles: Image<f32>,
}

impl TileCocMax {
    /// Dilated maximum for the tile containing half-res pixel `(x, y)`.
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.tiles.get(x / TILE, y / TILE)
    }
}

pub fn tile_max_coc(coc: &Image<f32>) -> TileCocMax {
    let (w, h) = coc.dims();
    let (tw, th) = (w.div_ceil(TILE), h.div_ceil(TILE));
    let raw = Image::from_fn(tw, th, |tx, ty| {
        let mut m = 0.0f32;
        for y in ty * TILE..((ty + 1) * TILE).min(h) {
            for x in tx * TILE..((tx + 1) * TILE).min(w) {
                m = m.max(coc.get(x, y));
            }
        }
        m
    });
    let tiles = Image::from_fn(tw, th, |tx, ty| {
        let mut m = 0.0f32;
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (tx as i64 + dx, ty as i64 + dy);
                if raw.in_bounds(nx, ny) {
                    m = m.max(raw.get(nx as usize, ny as usize));
                }
            }
        }
        m
    });
    TileCocMax { tiles }
}

/// Unit-radius ring layout: the center tap followed by `rings` rings of
/// 8, 16, 24, ... taps at radii `k / rings`.
pub fn ring_offsets(rings: usize) -> Vec<Vec2> {
    let mut taps = vec![Vec2::ZERO];
    for k in 1..=rings {
        let n = 8 * k;
        let r = k as f32 / rings as f32;
        for j in 0..n {
            let phi = 2.0 * PI * j as f32 / n as f32;
            taps.push(Vec2::new(phi.cos(), phi.sin()) * r);
        }
    }
    taps
}

/// Nearest pixel to a continuous offset; ties round away from the center,
/// the small bias keeps taps on the one-pixel ring off the center pixel.
#[inline]
fn nearest(v: f32) -> i64 {
    (v * (1.0 + 1e-4)).round() as i64
}

/// Bilateral depth weight for the prefilter.
#[inline]
fn depth_similarity(a: f32, b: f32, falloff: f32) -> f32 {
    let dz = if a == b { 0.0 } else { (a - b).abs() };
    (-dz / falloff).exp()
}

/// Depth falloff of the prefilter's bilateral weight, meters.
pub const PREFILTER_DEPTH_FALLOFF: f32 = 0.1;

/// 9-tap bilateral prefilter on a ring of diameter `max(tileMax/8, √2)`.
pub fn prefilter9(layer: &HalfResLayer, tiles: &TileCocMax) -> HalfResLayer {
    let ring = ring_offsets(1);
    let color = Image::par_from_fn(layer.width(), layer.height(), |x, y| {
        let radius = (tiles.at(x, y) / 8.0).max(SQRT_2) * 0.5;
        let zc = layer.depth.get(x, y);
        let mut acc = Vec3::ZERO;
        let mut wsum = 0.0f32;
        for o in &ring {
            let sx = x as i64 + nearest(o.x * radius);
            let sy = y as i64 + nearest(o.y * radius);
            let wt = depth_similarity(layer.depth.get_clamped(sx, sy), zc, PREFILTER_DEPTH_FALLOFF);
            acc += layer.color.get_clamped(sx, sy) * wt;
            wsum += wt;
        }
        acc / wsum
    });
    HalfResLayer {
        color,
        ..layer.clone()
    }
}

/// Tunables of the main filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MainFilterParams {
    /// Emission above which a sample counts toward bokeh intensity.
    pub specular_threshold: f32,
    /// Samples this far behind the center are limited to the center CoC.
    pub depth_range: f32,
    /// Samples this much nearer than the center are foreground.
    pub foreground_tolerance: f32,
}

impl Default for MainFilterParams {
    fn default() -> Self {
        Self {
            specular_threshold: 1.0,
            depth_range: 0.1,
            foreground_tolerance: 1e-3,
        }
    }
}

/// Inverse-area sample weight with a floor radius of half a pixel diagonal.
#[inline]
pub fn sample_alpha(r: f32) -> f32 {
    let r = r.max(FRAC_1_SQRT_2);
    1.0 / (PI * r * r)
}

/// Main filter output for one half-res pixel.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PostColor {
    /// Foreground average; alpha is its share of the total weight.
    pub near: Vec4,
    /// Background average; alpha is its share of the total weight.
    pub far: Vec4,
    /// Normalized foreground plus background sum.
    pub color: Rgb,
    /// Share of the 81 taps that are contributing highlights.
    pub bokeh: f32,
}

/// Scatter-as-gather main filter: center plus rings of 8/16/24/32 taps
/// scaled to the tile maximum.
pub fn mainfilter81(layer: &HalfResLayer, tiles: &TileCocMax, params: &MainFilterParams) -> Image<PostColor> {
    let taps = ring_offsets(4);
    let tap_count = taps.len() as f32;
    Image::par_from_fn(layer.width(), layer.height(), |x, y| {
        let center = layer.color.get(x, y);
        let max_r = tiles.at(x, y);
        let zc = layer.depth.get(x, y);
        let rc = layer.coc.get(x, y);
        let center_bokeh = (layer.specular.get(x, y) > params.specular_threshold) as u32 as f32;
        if max_r <= SQRT_2 {
            return PostColor {
                near: Vec4::ZERO,
                far: center.extend(1.0),
                color: center,
                bokeh: center_bokeh / tap_count,
            };
        }
        let (mut vf, mut wf) = (Vec3::ZERO, 0.0f32);
        let (mut vb, mut wb) = (Vec3::ZERO, 0.0f32);
        let mut highlights = 0u32;
        for o in &taps {
            let off = *o * max_r;
            let dist = off.length();
            let sx = x as i64 + off.x.round() as i64;
            let sy = y as i64 + off.y.round() as i64;
            let zi = layer.depth.get_clamped(sx, sy);
            let mut ri = layer.coc.get_clamped(sx, sy);
            if zi - zc > params.depth_range {
                ri = ri.min(rc);
            }
            if dist > 0.0 && ri <= dist {
                continue;
            }
            let wt = sample_alpha(ri);
            let ci = layer.color.get_clamped(sx, sy);
            if zi < zc - params.foreground_tolerance {
                vf += ci * wt;
                wf += wt;
            } else {
                vb += ci * wt;
                wb += wt;
            }
            if layer.specular.get_clamped(sx, sy) > params.specular_threshold {
                highlights += 1;
            }
        }
        let total = wf + wb;
        if total <= 0.0 {
            return PostColor {
                near: Vec4::ZERO,
                far: center.extend(1.0),
                color: center,
                bokeh: 0.0,
            };
        }
        let near = if wf > 0.0 { (vf / wf).extend(wf / total) } else { Vec4::ZERO };
        let far = if wb > 0.0 { (vb / wb).extend(wb / total) } else { Vec4::ZERO };
        PostColor {
            near,
            far,
            color: (vf + vb) / total,
            bokeh: highlights as f32 / tap_count,
        }
    })
}

/// Scalar types the median network can sort.
pub trait MedianChannels: Copy + Send + Sync + Default {
    fn median9(v: [Self; 9]) -> Self;
}

/// Median of nine by the 19-exchange network (Devillard's `opt_med9`).
pub fn med9(mut p: [f32; 9]) -> f32 {
    macro_rules! sort {
        ($a:expr, $b:expr) => {
            if p[$a] > p[$b] {
                p.swap($a, $b);
            }
        };
    }
    sort!(1, 2);
    sort!(4, 5);
    sort!(7, 8);
    sort!(0, 1);
    sort!(3, 4);
    sort!(6, 7);
    sort!(1, 2);
    sort!(4, 5);
    sort!(7, 8);
    sort!(0, 3);
    sort!(5, 8);
    sort!(4, 7);
    sort!(3, 6);
    sort!(1, 4);
    sort!(2, 5);
    sort!(4, 7);
    sort!(4, 2);
    sort!(6, 4);
    sort!(4, 2);
    p[4]
}

impl MedianChannels for f32 {
    fn median9(v: [f32; 9]) -> f32 {
        med9(v)
    }
}

impl MedianChannels for Vec3 {
    fn median9(v: [Vec3; 9]) -> Vec3 {
        Vec3::new(med9(v.map(|c| c.x)), med9(v.map(|c| c.y)), med9(v.map(|c| c.z)))
    }
}

impl MedianChannels for Vec4 {
    fn median9(v: [Vec4; 9]) -> Vec4 {
        Vec4::new(
            med9(v.map(|c| c.x)),
            med9(v.map(|c| c.y)),
            med9(v.map(|c| c.z)),
            med9(v.map(|c| c.w)),
        )
    }
}

/// Per-channel 3×3 median with clamp-to-edge addressing.
pub fn median3x3<T: MedianChannels>(img: &Image<T>) -> Image<T> {
    Image::par_from_fn(img.width(), img.height(), |x, y| {
        let mut v = [T::default(); 9];
        for (k, slot) in v.iter_mut().enumerate() {
            let dx = (k % 3) as i64 - 1;
            let dy = (k / 3) as i64 - 1;
            *slot = img.get_clamped(x as i64 + dx, y as i64 + dy);
        }
        T::median9(v)
    })
}

/// Everything the post-process branch hands to the compositor.
#[derive(Debug, Clone)]
pub struct PostOutput {
    pub layer: HalfResLayer,
    pub tiles: TileCocMax,
    pub main: Image<PostColor>,
    /// Median-filtered `color`, half res.
    pub color: Image<Rgb>,
    /// Median-filtered bokeh intensity, half res.
    pub bokeh: Image<f32>,
}

pub fn post_process(sharp: &Image<Rgb>, gbuffer: &GBuffer, cam: &ThinLensCamera, params: &MainFilterParams) -> PostOutput {
    let layer = downscale_half(sharp, gbuffer, cam);
    let tiles = tile_max_coc(&layer.coc);
    let pre = prefilter9(&layer, &tiles);
    let main = mainfilter81(&pre, &tiles, params);
    let color = median3x3(&main.map(|p| p.color));
    let bokeh = median3x3(&main.map(|p| p.bokeh));
    PostOutput {
        layer,
        tiles,
        main,
        color,
        bokeh,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn layer_from(color: Image<Rgb>, coc: f32, depth: f32) -> HalfResLayer {
        let (w, h) = color.dims();
        HalfResLayer {
            color,
            coc: Image::filled(w, h, coc),
            depth: Image::filled(w, h, depth),
            specular: Image::filled(w, h, 0.0),
        }
    }

    #[test]
    fn ring_layouts_have_expected_tap_counts() {
        assert_eq!(ring_offsets(4).len(), 81);
        assert_eq!(ring_offsets(3).len(), 49);
        assert_eq!(ring_offsets(1).len(), 9);
        let outer = ring_offsets(4)[80].length();
        assert!((outer - 1.0).abs() < 1e-6);
    }

    #[test]
    fn tile_dilation_of_single_pixel() {
        let mut coc = Image::filled(64, 40, 0.0f32);
        coc.set(27, 19, 20.0);
        let t = tile_max_coc(&coc);
        // Pixel (27, 19) sits in tile (3, 2).
        for ty in 0..t.tiles.height() {
            for tx in 0..t.tiles.width() {
                let expect = if (tx as i64 - 3).abs() <= 1 && (ty as i64 - 2).abs() <= 1 { 20.0 } else { 0.0 };
                assert_eq!(t.tiles.get(tx, ty), expect, "tile {tx},{ty}");
            }
        }
    }

    #[test]
    fn tile_max_matches_brute_force_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let coc = Image::from_fn(53, 37, |_, _| rng.gen_range(0.0..30.0f32));
        let t = tile_max_coc(&coc);
        for y in 0..coc.height() {
            for x in 0..coc.width() {
                let (tx, ty) = ((x / TILE) as i64, (y / TILE) as i64);
                let x0 = ((tx - 1) * TILE as i64).max(0);
                let y0 = ((ty - 1) * TILE as i64).max(0);
                let x1 = ((tx + 2) * TILE as i64).min(coc.width() as i64);
                let y1 = ((ty + 2) * TILE as i64).min(coc.height() as i64);
                let mut m = 0.0f32;
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        m = m.max(coc.get(xx as usize, yy as usize));
                    }
                }
                assert_eq!(t.at(x, y), m);
            }
        }
    }

    #[test]
    fn prefilter_preserves_constants() {
        let layer = layer_from(Image::filled(20, 12, Vec3::new(0.3, 0.6, 0.9)), 9.0, 2.0);
        let tiles = tile_max_coc(&layer.coc);
        let out = prefilter9(&layer, &tiles);
        for c in out.color.pixels() {
            assert!((*c - Vec3::new(0.3, 0.6, 0.9)).abs().max_element() < 1e-6);
        }
    }

    #[test]
    fn prefilter_in_focus_ring_hits_eight_distinct_neighbors() {
        let ring = ring_offsets(1);
        let radius = SQRT_2 * 0.5;
        let mut seen: Vec<(i64, i64)> = ring.iter().map(|o| (nearest(o.x * radius), nearest(o.y * radius))).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 9);
        assert!(seen.iter().all(|&(x, y)| x.abs() <= 1 && y.abs() <= 1));
    }

    #[test]
    fn prefilter_impulse_preserves_energy() {
        let mut color = Image::filled(32, 32, Vec3::ZERO);
        color.set(16, 16, Vec3::ONE);
        let layer = layer_from(color, 16.0, 2.0);
        let tiles = tile_max_coc(&layer.coc);
        let out = prefilter9(&layer, &tiles);
        let sum: f32 = out.color.pixels().iter().map(|c| c.x).sum();
        assert!((sum - 1.0).abs() < 1e-4, "{sum}");
        // Diameter 16/8 = 2: taps sit one pixel from the center.
        assert!((out.color.get(15, 16).x - 1.0 / 9.0).abs() < 1e-6);
        assert!((out.color.get(17, 17).x - 1.0 / 9.0).abs() < 1e-6);
        assert_eq!(out.color.get(18, 16).x, 0.0);
    }

    #[test]
    fn main_filter_in_focus_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let color = Image::from_fn(24, 16, |_, _| Vec3::new(rng.gen(), rng.gen(), rng.gen()));
        let layer = layer_from(color.clone(), 0.5, 2.0);
        let tiles = tile_max_coc(&layer.coc);
        let out = mainfilter81(&layer, &tiles, &MainFilterParams::default());
        for (p, c) in out.pixels().iter().zip(color.pixels()) {
            assert_eq!(p.color, *c);
        }
    }

    #[test]
    fn main_filter_sharp_neighborhood_keeps_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let color = Image::from_fn(24, 16, |_, _| Vec3::new(rng.gen(), rng.gen(), rng.gen()));
        let mut layer = layer_from(color.clone(), 0.2, 2.0);
        // A distant blurred pixel raises the tile max without reaching the center.
        layer.coc.set(23, 15, 3.0);
        let tiles = tile_max_coc(&layer.coc);
        let out = mainfilter81(&layer, &tiles, &MainFilterParams::default());
        assert_eq!(out.get(2, 2).color, color.get(2, 2));
    }

    #[test]
    fn main_filter_preserves_constant_field() {
        let layer = layer_from(Image::filled(40, 30, Vec3::new(0.2, 0.4, 0.7)), 6.0, 3.0);
        let tiles = tile_max_coc(&layer.coc);
        let out = mainfilter81(&layer, &tiles, &MainFilterParams::default());
        for p in out.pixels() {
            assert!((p.color - Vec3::new(0.2, 0.4, 0.7)).abs().max_element() < 1e-5);
            assert_eq!(p.bokeh, 0.0);
        }
    }

    #[test]
    fn sample_alpha_is_non_increasing() {
        let mut prev = f32::INFINITY;
        for i in 0..200 {
            let a = sample_alpha(i as f32 * 0.1);
            assert!(a <= prev);
            prev = a;
        }
        assert!((sample_alpha(0.0) - 2.0 / PI).abs() < 1e-6);
    }

    #[test]
    fn bokeh_counts_highlights() {
        let mut layer = layer_from(Image::filled(40, 40, Vec3::splat(0.5)), 8.0, 2.0);
        layer.specular.set(20, 20, 5.0);
        let tiles = tile_max_coc(&layer.coc);
        let out = mainfilter81(&layer, &tiles, &MainFilterParams::default());
        assert!((out.get(20, 20).bokeh - 1.0 / 81.0).abs() < 1e-7);
        assert!(out.pixels().iter().all(|p| (0.0..=1.0).contains(&p.bokeh)));
        assert_eq!(out.get(0, 0).bokeh, 0.0);
    }

    #[test]
    fn emissive_point_spreads_to_disk_like_scatter_reference() {
        let (w, h, r) = (64usize, 64usize, 10.0f32);
        let (cx, cy) = (32usize, 32usize);
        let energy = 100.0f32;
        let mut color = Image::filled(w, h, Vec3::ZERO);
        color.set(cx, cy, Vec3::splat(energy));
        let layer = layer_from(color, r, 4.0);
        let tiles = tile_max_coc(&layer.coc);
        let out = mainfilter81(&prefilter9(&layer, &tiles), &tiles, &MainFilterParams::default());
        // Scatter oracle: the energy lands uniformly on a disk of radius r.
        let disk_pixels = (0..w * h)
            .filter(|i| {
                let d = Vec2::new((i % w) as f32 - cx as f32, (i / w) as f32 - cy as f32);
                d.length() <= r
            })
            .count() as f32;
        let scatter_level = energy / disk_pixels;
        let (mut inside, mut n_inside, mut outside) = (0.0f32, 0.0f32, 0.0f32);
        for y in 0..h {
            for x in 0..w {
                let d = Vec2::new(x as f32 - cx as f32, y as f32 - cy as f32).length();
                let v = out.get(x, y).color.x;
                if d <= r - 1.0 {
                    inside += v;
                    n_inside += 1.0;
                } else if d > r + 1.5 {
                    outside += v;
                }
            }
        }
        let total: f32 = out.pixels().iter().map(|p| p.color.x).sum();
        assert!((total - energy).abs() / energy < 0.02, "energy {total}");
        let mean = inside / n_inside;
        assert!((mean - scatter_level).abs() / scatter_level < 0.25, "{mean} vs {scatter_level}");
        assert_eq!(outside, 0.0);
    }

    #[test]
    fn med9_matches_sorting() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..2000 {
            let v: [f32; 9] = std::array::from_fn(|_| rng.gen_range(0..6) as f32);
            let mut s = v;
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(med9(v), s[4]);
        }
    }

    #[test]
    fn median_image_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = Image::from_fn(16, 16, |_, _| rng.gen::<f32>());
        let out = median3x3(&img);
        for y in 0..16i64 {
            for x in 0..16i64 {
                let mut v: Vec<f32> = (-1..=1)
                    .flat_map(|dy| (-1..=1).map(move |dx| (dx, dy)))
                    .map(|(dx, dy)| img.get_clamped(x + dx, y + dy))
                    .collect();
                v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                assert_eq!(out.get(x as usize, y as usize), v[4]);
            }
        }
    }

    #[test]
    fn median_removes_outlier() {
        let mut img = Image::filled(8, 8, Vec3::splat(0.25));
        img.set(4, 4, Vec3::splat(9.0));
        let out = median3x3(&img);
        assert!(out.pixels().iter().all(|c| *c == Vec3::splat(0.25)));
    }

    #[test]
    fn downscale_rules() {
        use crate::lens::Pose;
        use crate::visibility::GPixel;
        let cam = ThinLensCamera {
            aperture: 0.035,
            focal_length: 0.05,
            focus_distance: 2.0,
            sensor_width: 0.036,
            image_width: 4,
            image_height: 2,
            pose: Pose::look_at(glam::DVec3::ZERO, glam::DVec3::Z, glam::DVec3::Y),
        };
        let depths = [1.0f32, 2.0, 2.0, 2.0, 3.0, 4.0, 2.0, 2.0];
        let g = GBuffer {
            pixels: Image::from_fn(4, 2, |x, y| GPixel {
                depth: depths[y * 4 + x],
                ..Default::default()
            }),
            jitter: Vec2::ZERO,
        };
        let sharp = Image::from_fn(4, 2, |x, y| Vec3::splat(((x + y) % 2) as f32));
        let half = downscale_half(&sharp, &g, &cam);
        assert_eq!(half.depth.get(0, 0), 1.0);
        assert_eq!(half.depth.get(1, 0), 2.0);
        assert_eq!(half.color.get(0, 0), Vec3::splat(0.5));
        assert_eq!(half.coc.get(1, 0), 0.0);
        let expect = half_res_radius(cam.coc_diameter_px(1.0).unwrap());
        assert_eq!(half.coc.get(0, 0), expect);
        assert_eq!(half_dims(5, 3), (3, 2));
    }
}
