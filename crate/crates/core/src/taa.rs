//! Temporal anti-aliasing: Halton projection jitter and a clamped
//! exponential history resolve.

use glam::{Vec2, Vec3};

use crate::image::{Image, Rgb};

/// Radical inverse of `index` in `base`.
pub fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

/// Subpixel offset for a frame: Halton (2, 3) at `frame + 1`, centered.
pub fn halton_jitter(frame: u64) -> Vec2 {
    Vec2::new(
        (halton(frame + 1, 2) - 0.5) as f32,
        (halton(frame + 1, 3) - 0.5) as f32,
    )
}

pub const DEFAULT_TAA_BLEND: f32 = 0.9;

/// History for one TAA stage.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaaHistory {
    pub image: Option<Image<Rgb>>,
}

fn neighborhood_bounds(img: &Image<Rgb>, x: usize, y: usize) -> (Vec3, Vec3) {
    let mut lo = Vec3::splat(f32::INFINITY);
    let mut hi = Vec3::splat(f32::NEG_INFINITY);
    for dy in -1..=1i64 {
        for dx in -1..=1i64 {
            let c = img.get_clamped(x as i64 + dx, y as i64 + dy);
            lo = lo.min(c);
            hi = hi.max(c);
        }
    }
    (lo, hi)
}

/// Resolve `current` against the reprojected history. `motion` is in
/// pixels of `current`; `None` marks pixels whose history is unusable.
pub fn taa_resolve(current: &Image<Rgb>, history: &mut TaaHistory, motion: &Image<Option<Vec2>>, blend: f32) -> Image<Rgb> {
    let (w, h) = current.dims();
    let resolved = match &history.image {
        Some(prev) if prev.dims() == (w, h) => Image::par_from_fn(w, h, |x, y| {
            let c = current.get(x, y);
            let Some(m) = motion.get(x, y) else {
                return c;
            };
            let (sx, sy) = (x as f32 - m.x, y as f32 - m.y);
            if sx < -0.5 || sy < -0.5 || sx > w as f32 - 0.5 || sy > h as f32 - 0.5 {
                return c;
            }
            let (lo, hi) = neighborhood_bounds(current, x, y);
            let hist = prev.sample_bilinear(sx, sy).clamp(lo, hi);
            c.lerp(hist, blend)
        }),
        _ => current.clone(),
    };
    history.image = Some(resolved.clone());
    resolved
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_values() {
        assert_eq!(halton(1, 2), 0.5);
        assert_eq!(halton(2, 2), 0.25);
        assert_eq!(halton(3, 2), 0.75);
        assert!((halton(1, 3) - 1.0 / 3.0).abs() < 1e-15);
        assert!((halton(2, 3) - 2.0 / 3.0).abs() < 1e-15);
        assert!((halton(3, 3) - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn first_jitter() {
        let j = halton_jitter(0);
        assert_eq!(j.x, 0.0);
        assert!((j.y + 1.0 / 6.0).abs() < 1e-6);
    }

    #[test]
    fn jitter_bounded_and_centered() {
        let mut sum = Vec2::ZERO;
        for f in 0..64 {
            let j = halton_jitter(f);
            assert!(j.x.abs() <= 0.5 && j.y.abs() <= 0.5);
            sum += j;
        }
        let mean = sum / 64.0;
        assert!(mean.x.abs() < 0.02 && mean.y.abs() < 0.02, "{mean}");
    }

    fn still(w: usize, h: usize) -> Image<Option<Vec2>> {
        Image::filled(w, h, Some(Vec2::ZERO))
    }

    #[test]
    fn constant_stream_unchanged() {
        let img = Image::filled(8, 6, Vec3::new(0.2, 0.3, 0.4));
        let mut hist = TaaHistory::default();
        for _ in 0..5 {
            assert_eq!(taa_resolve(&img, &mut hist, &still(8, 6), 0.9), img);
        }
    }

    #[test]
    fn flicker_variance_drops() {
        let mut hist = TaaHistory::default();
        let (mut inp, mut out) = (Vec::new(), Vec::new());
        for f in 0..40 {
            let mut img = Image::filled(5, 5, Vec3::splat(0.5));
            let v = if f % 2 == 0 { 1.0 } else { 0.0 };
            img.set(2, 2, Vec3::splat(v));
            let r = taa_resolve(&img, &mut hist, &still(5, 5), 0.9);
            inp.push(v);
            out.push(r.get(2, 2).x);
        }
        let var = |v: &[f32]| {
            let m = v.iter().sum::<f32>() / v.len() as f32;
            v.iter().map(|a| (a - m).powi(2)).sum::<f32>() / v.len() as f32
        };
        assert!(var(&out) < var(&inp));
    }

    #[test]
    fn output_stays_in_neighborhood_box() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut hist = TaaHistory::default();
        for _ in 0..10 {
            let img = Image::from_fn(9, 7, |_, _| Vec3::new(rng.gen(), rng.gen(), rng.gen()));
            let motion = Image::from_fn(9, 7, |_, _| Some(Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))));
            let r = taa_resolve(&img, &mut hist, &motion, 0.9);
            for y in 0..7 {
                for x in 0..9 {
                    let (lo, hi) = neighborhood_bounds(&img, x, y);
                    let c = r.get(x, y);
                    assert!(c.cmpge(lo - 1e-6).all() && c.cmple(hi + 1e-6).all());
                }
            }
        }
    }

    #[test]
    fn jittered_edge_settles() {
        // Hard edge at x = 10.3 point-sampled at jittered centers.
        let edge = 10.3f32;
        let mut hist = TaaHistory::default();
        let mut prev_in: Option<Image<Rgb>> = None;
        let mut prev_out: Option<Image<Rgb>> = None;
        let (mut din, mut dout) = (Vec::new(), Vec::new());
        let mut tail = Vec::new();
        for f in 0..96 {
            let j = halton_jitter(f);
            let img = Image::from_fn(20, 4, |x, _| Vec3::splat((x as f32 + 0.5 + j.x >= edge) as u32 as f32));
            let out = taa_resolve(&img, &mut hist, &still(20, 4), 0.9);
            let diff = |a: &Image<Rgb>, b: &Image<Rgb>| {
                a.pixels().iter().zip(b.pixels()).map(|(p, q)| (*p - *q).abs().x).sum::<f32>() / a.len() as f32
            };
            if let (Some(pi), Some(po)) = (&prev_in, &prev_out) {
                din.push(diff(&img, pi));
                dout.push(diff(&out, po));
            }
            if f >= 64 {
                tail.push(out.get(10, 1).x);
            }
            prev_in = Some(img);
            prev_out = Some(out);
        }
        let mean = |v: &[f32]| v.iter().sum::<f32>() / v.len() as f32;
        assert!(mean(&dout) <= mean(&din));
        // Pixel 10 samples past the edge whenever jitter >= -0.2, i.e. 70% of the time.
        assert!((mean(&tail) - 0.7).abs() < 0.05, "{}", mean(&tail));
        // Frame-to-frame change is bounded by the history weight after warm-up.
        assert!(dout[5..].iter().all(|&d| d <= 0.1 / 20.0 + 1e-6));
    }
}
