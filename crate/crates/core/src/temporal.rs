//! Temporal accumulation of the ray-traced fields.
//!
//! Near-field history follows the G-buffer motion vectors; far-field
//! history follows the average world position of far hits. Both are
//! exponential moving averages. The merged color interpolates the two
//! fields by the accumulated hit ratio, or by the latest one while moving.
//! Luminance moments of the merged color give the variance that drives the
//! next frame's ray mask.

use glam::{DVec3, Vec2, Vec4};

use crate::image::{gaussian_blur5, luminance, Image, Lerp, Rgb};
use crate::lens::ThinLensCamera;
use crate::rtdof::{half_res_center, unpremultiply, FieldColor};
use crate::visibility::GBuffer;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalParams {
    pub alpha: f32,
    pub alpha_motion: f32,
    /// Full-res pixels of motion above which `alpha_motion` applies.
    pub motion_threshold: f32,
    /// Relative depth mismatch that rejects near history.
    pub disocclusion_tolerance: f32,
}

impl Default for TemporalParams {
    fn default() -> Self {
        Self {
            alpha: 0.95,
            alpha_motion: 0.8,
            motion_threshold: 0.5,
            disocclusion_tolerance: 0.05,
        }
    }
}

/// Near-field history record (reprojected along motion vectors).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NearHistory {
    pub near: Vec4,
    pub hit_ratio: f32,
    pub coc: f32,
    /// Luminance moments `(μ₁, μ₂)` of the merged color.
    pub moments: Vec2,
}

/// Far-field history record (reprojected along far world positions).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FarHistory {
    pub far: Vec4,
    pub coc: f32,
}

impl Lerp for NearHistory {
    fn lerp_to(self, o: Self, t: f32) -> Self {
        Self {
            near: self.near.lerp_to(o.near, t),
            hit_ratio: self.hit_ratio.lerp_to(o.hit_ratio, t),
            coc: self.coc.lerp_to(o.coc, t),
            moments: self.moments.lerp_to(o.moments, t),
        }
    }
    fn scaled(self, s: f32) -> Self {
        Self {
            near: self.near * s,
            hit_ratio: self.hit_ratio * s,
            coc: self.coc * s,
            moments: self.moments * s,
        }
    }
    fn add(self, o: Self) -> Self {
        Self {
            near: self.near + o.near,
            hit_ratio: self.hit_ratio + o.hit_ratio,
            coc: self.coc + o.coc,
            moments: self.moments + o.moments,
        }
    }
    fn zero() -> Self {
        Self::default()
    }
}

impl Lerp for FarHistory {
    fn lerp_to(self, o: Self, t: f32) -> Self {
        Self {
            far: self.far.lerp_to(o.far, t),
            coc: self.coc.lerp_to(o.coc, t),
        }
    }
    fn scaled(self, s: f32) -> Self {
        Self {
            far: self.far * s,
            coc: self.coc * s,
        }
    }
    fn add(self, o: Self) -> Self {
        Self {
            far: self.far + o.far,
            coc: self.coc + o.coc,
        }
    }
    fn zero() -> Self {
        Self::default()
    }
}

/// Accumulated ray-trace state at half resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalState {
    pub near: Image<NearHistory>,
    pub far: Image<FarHistory>,
    pub near_valid: Image<bool>,
    pub far_valid: Image<bool>,
    /// Half-res depth the history was accumulated against.
    pub depth: Image<f32>,
    /// Blurred σ² of the merged luminance.
    pub variance: Image<f32>,
    pub frame_index: u64,
    pub camera: Option<ThinLensCamera>,
}

impl TemporalState {
    /// Empty state: every pixel starts without history.
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            near: Image::filled(width, height, NearHistory::default()),
            far: Image::filled(width, height, FarHistory::default()),
            near_valid: Image::filled(width, height, false),
            far_valid: Image::filled(width, height, false),
            depth: Image::filled(width, height, f32::INFINITY),
            variance: Image::filled(width, height, 0.0),
            frame_index: 0,
            camera: None,
        }
    }

    /// State with valid, uniform history, for warm starts and tests.
    pub fn seeded(width: usize, height: usize, near: NearHistory, far: FarHistory, depth: f32, camera: ThinLensCamera) -> Self {
        Self {
            near: Image::filled(width, height, near),
            far: Image::filled(width, height, far),
            near_valid: Image::filled(width, height, true),
            far_valid: Image::filled(width, height, true),
            depth: Image::filled(width, height, depth),
            variance: Image::filled(width, height, 0.0),
            frame_index: 0,
            camera: Some(camera),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.near.dims()
    }
}

/// Bilinear history fetch at per-pixel source positions (history pixel
/// units). Sources outside the image or on invalid history are invalid.
pub fn fetch_history<T: Lerp + Send + Sync + Default>(
    history: &Image<T>,
    valid: &Image<bool>,
    sources: &Image<Option<Vec2>>,
) -> (Image<T>, Image<bool>) {
    let (w, h) = history.dims();
    let both = Image::par_from_fn(w, h, |x, y| match sources.get(x, y) {
        Some(s) if s.x >= -0.5 && s.y >= -0.5 && s.x <= w as f32 - 0.5 && s.y <= h as f32 - 0.5 => {
            let (nx, ny) = (s.x.round() as i64, s.y.round() as i64);
            if valid.get_clamped(nx, ny) {
                (history.sample_bilinear(s.x, s.y), true)
            } else {
                (T::default(), false)
            }
        }
        _ => (T::default(), false),
    });
    (both.map(|b| b.0), both.map(|b| b.1))
}

/// History fetched at `p − motion(p)`; `motion` is in history pixels and
/// `None` marks disocclusion.
pub fn reproject_near<T: Lerp + Send + Sync + Default>(
    history: &Image<T>,
    valid: &Image<bool>,
    motion: &Image<Option<Vec2>>,
) -> (Image<T>, Image<bool>) {
    let sources = Image::from_fn(motion.width(), motion.height(), |x, y| {
        motion.get(x, y).map(|m| Vec2::new(x as f32, y as f32) - m)
    });
    fetch_history(history, valid, &sources)
}

/// Screen displacement of a world point between two cameras, full-res px.
fn displacement(p: DVec3, curr: &ThinLensCamera, prev: &ThinLensCamera) -> Option<Vec2> {
    Some((curr.project(p)? - prev.project(p)?).as_vec2())
}

/// Per-pixel far-field world positions: own average, else the mean of the
/// 3×3 neighbors that have one.
pub fn far_positions(fields: &Image<FieldColor>) -> Image<Option<DVec3>> {
    let (w, h) = fields.dims();
    Image::par_from_fn(w, h, |x, y| {
        if let Some(p) = fields.get(x, y).far_world {
            return Some(p);
        }
        let mut acc = DVec3::ZERO;
        let mut n = 0;
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if fields.in_bounds(nx, ny) {
                    if let Some(p) = fields.get(nx as usize, ny as usize).far_world {
                        acc += p;
                        n += 1;
                    }
                }
            }
        }
        (n > 0).then(|| acc / n as f64)
    })
}

/// Far history reprojected through far-hit world positions.
pub fn reproject_far<T: Lerp + Send + Sync + Default>(
    history: &Image<T>,
    valid: &Image<bool>,
    fields: &Image<FieldColor>,
    cam_curr: &ThinLensCamera,
    cam_prev: &ThinLensCamera,
) -> (Image<T>, Image<bool>, Image<f32>) {
    let positions = far_positions(fields);
    let moves = positions.map(|p| p.and_then(|p| displacement(p, cam_curr, cam_prev)));
    let sources = Image::from_fn(history.width(), history.height(), |x, y| {
        moves.get(x, y).map(|d| Vec2::new(x as f32, y as f32) - d * 0.5)
    });
    let (hist, ok) = fetch_history(history, valid, &sources);
    (hist, ok, moves.map(|m| m.map_or(0.0, |v| v.length())))
}

/// Result of blending one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AccumPixel {
    pub near: NearHistory,
    pub far: FarHistory,
    pub merged: Rgb,
    /// Accumulated CoC `c_t`, full-res px.
    pub coc: f32,
    /// Blend weight of the near field used for `merged`.
    pub k: f32,
    pub alpha_near: f32,
}

#[inline]
fn blend_factor(valid: bool, moving: bool, p: &TemporalParams) -> f32 {
    match (valid, moving) {
        (false, _) => 0.0,
        (true, true) => p.alpha_motion,
        (true, false) => p.alpha,
    }
}

/// EMA update of one pixel. `None` histories are treated as invalid.
pub fn accumulate_pixel(
    cur: &FieldColor,
    near_hist: Option<NearHistory>,
    far_hist: Option<FarHistory>,
    moving: bool,
    params: &TemporalParams,
) -> AccumPixel {
    let an = blend_factor(near_hist.is_some(), moving, params);
    let af = blend_factor(far_hist.is_some(), moving, params);
    let nh = near_hist.unwrap_or_default();
    let fh = far_hist.unwrap_or_default();

    let near = nh.near * an + cur.near * (1.0 - an);
    let hit_ratio = (nh.hit_ratio * an + cur.hit_ratio * (1.0 - an)).clamp(0.0, 1.0);
    let coc_n = nh.coc * an + cur.near_coc * (1.0 - an);
    let far = fh.far * af + cur.far * (1.0 - af);
    let coc_f = fh.coc * af + cur.far_coc * (1.0 - af);

    let mut k = if moving { cur.hit_ratio } else { hit_ratio };
    if near.w <= 0.0 {
        k = 0.0;
    }
    if far.w <= 0.0 && near.w > 0.0 {
        k = 1.0;
    }
    let merged = unpremultiply(far).lerp(unpremultiply(near), k);
    let coc = coc_f + (coc_n - coc_f) * k;

    let moments = update_moments(nh.moments, luminance(merged), an);
    AccumPixel {
        near: NearHistory {
            near,
            hit_ratio,
            coc: coc_n,
            moments,
        },
        far: FarHistory { far, coc: coc_f },
        merged,
        coc,
        k,
        alpha_near: an,
    }
}

/// EMA of the luminance moments `(μ₁, μ₂)`.
#[inline]
pub fn update_moments(moments: Vec2, l: f32, alpha: f32) -> Vec2 {
    moments * alpha + Vec2::new(l, l * l) * (1.0 - alpha)
}

/// `max(0, μ₂ − μ₁²)`.
#[inline]
pub fn moment_variance(m: Vec2) -> f32 {
    (m.y - m.x * m.x).max(0.0)
}

/// Blurred σ² from per-pixel moments.
pub fn update_variance(moments: &Image<Vec2>) -> Image<f32> {
    gaussian_blur5(&moments.map(moment_variance))
}

/// Accumulation output consumed by reconstruction and compositing.
#[derive(Debug, Clone, PartialEq)]
pub struct AccumOutput {
    pub merged: Image<Rgb>,
    /// Accumulated hit ratio `h`.
    pub hit_ratio: Image<f32>,
    /// Accumulated CoC `c_t`, full-res px.
    pub coc: Image<f32>,
    /// Pixels that carry ray-traced data this frame.
    pub available: Image<bool>,
}

/// Half-res motion in half-res pixels, averaged over each 2×2 block;
/// `None` where any full-res motion was flagged invalid.
pub fn half_res_motion(gbuffer: &GBuffer) -> Image<Option<Vec2>> {
    let (w, h) = (gbuffer.width(), gbuffer.height());
    let (hw, hh) = crate::image::half_dims(w, h);
    Image::par_from_fn(hw, hh, |x, y| {
        let mut acc = Vec2::ZERO;
        let mut n = 0.0;
        for sy in 2 * y..(2 * y + 2).min(h) {
            for sx in 2 * x..(2 * x + 2).min(w) {
                let p = gbuffer.get(sx, sy);
                if !p.motion_valid {
                    return None;
                }
                acc += p.motion;
                n += 1.0;
            }
        }
        Some(acc / n * 0.5)
    })
}

impl TemporalState {
    /// Reproject, blend and refresh variance for one frame.
    pub fn accumulate_frame(
        &mut self,
        fields: &Image<FieldColor>,
        gbuffer: &GBuffer,
        half_depth: &Image<f32>,
        cam: &ThinLensCamera,
        params: &TemporalParams,
    ) -> AccumOutput {
        let (w, h) = fields.dims();
        assert_eq!((w, h), self.dims(), "temporal state size mismatch");
        let prev_cam = self.camera.unwrap_or(*cam);
        let motion = half_res_motion(gbuffer);
        let (near_hist, mut near_ok) = reproject_near(&self.near, &self.near_valid, &motion);
        let (far_hist, far_ok, far_motion) = reproject_far(&self.far, &self.far_valid, fields, cam, &prev_cam);

        // Depth test against the reprojected previous surface.
        let sources = Image::from_fn(w, h, |x, y| motion.get(x, y).map(|m| Vec2::new(x as f32, y as f32) - m));
        for y in 0..h {
            for x in 0..w {
                if !near_ok.get(x, y) {
                    continue;
                }
                let s = sources.get(x, y).unwrap();
                let prev_depth = self.depth.get_clamped(s.x.round() as i64, s.y.round() as i64);
                let z = half_depth.get(x, y);
                let expected = if z.is_finite() {
                    let (px, py) = half_res_center(x, y, gbuffer.jitter);
                    prev_cam.view_depth(cam.unproject(px, py, z as f64)) as f32
                } else {
                    f32::INFINITY
                };
                let ok = if expected.is_infinite() || prev_depth.is_infinite() {
                    expected.is_infinite() && prev_depth.is_infinite()
                } else {
                    (prev_depth - expected).abs() <= params.disocclusion_tolerance * expected
                };
                near_ok.set(x, y, ok);
            }
        }

        let pixels = Image::par_from_fn(w, h, |x, y| {
            let cur = fields.get(x, y);
            if cur.is_empty() {
                return (AccumPixel::default(), false);
            }
            let near_motion = motion.get(x, y).map_or(0.0, |m| m.length() * 2.0);
            let moving = near_motion.max(far_motion.get(x, y)) > params.motion_threshold;
            let px = accumulate_pixel(
                &cur,
                near_ok.get(x, y).then(|| near_hist.get(x, y)),
                far_ok.get(x, y).then(|| far_hist.get(x, y)),
                moving,
                params,
            );
            (px, true)
        });

        self.near = pixels.map(|p| p.0.near);
        self.far = pixels.map(|p| p.0.far);
        self.near_valid = pixels.map(|p| p.1);
        self.far_valid = pixels.map(|p| p.1);
        self.depth = half_depth.clone();
        self.variance = update_variance(&self.near.map(|n| n.moments));
        self.camera = Some(*cam);
        self.frame_index += 1;

        AccumOutput {
            merged: pixels.map(|p| p.0.merged),
            hit_ratio: pixels.map(|p| p.0.near.hit_ratio),
            coc: pixels.map(|p| p.0.coc),
            available: pixels.map(|p| p.1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use glam::Vec3;

    fn field(near: Rgb, far: Rgb, h: f32) -> FieldColor {
        FieldColor {
            near: (near * h).extend(h),
            far: (far * (1.0 - h)).extend(1.0 - h),
            hit_ratio: h,
            near_coc: 20.0,
            far_coc: 8.0,
            far_world: None,
            rays: 4,
        }
    }

    #[test]
    fn zero_motion_keeps_history() {
        let hist = Image::from_fn(6, 4, |x, y| (x * 10 + y) as f32);
        let valid = Image::filled(6, 4, true);
        let (out, ok) = reproject_near(&hist, &valid, &Image::filled(6, 4, Some(Vec2::ZERO)));
        assert_eq!(out, hist);
        assert!(ok.pixels().iter().all(|&v| v));
    }

    #[test]
    fn shift_by_two_pixels() {
        let hist = Image::from_fn(8, 3, |x, _| x as f32);
        let valid = Image::filled(8, 3, true);
        let (out, ok) = reproject_near(&hist, &valid, &Image::filled(8, 3, Some(Vec2::new(2.0, 0.0))));
        for x in 2..8 {
            assert_eq!(out.get(x, 1), x as f32 - 2.0);
            assert!(ok.get(x, 1));
        }
        assert!(!ok.get(0, 1) && !ok.get(1, 1));
    }

    #[test]
    fn disocclusion_flag_invalidates() {
        let hist = Image::filled(4, 4, 1.0f32);
        let valid = Image::filled(4, 4, true);
        let mut motion = Image::filled(4, 4, Some(Vec2::ZERO));
        motion.set(2, 2, None);
        let (_, ok) = reproject_near(&hist, &valid, &motion);
        assert!(!ok.get(2, 2) && ok.get(1, 1));
    }

    #[test]
    fn far_positions_fall_back_to_neighbors() {
        let mut fields = Image::filled(5, 5, FieldColor::default());
        let mut with = FieldColor::default();
        for (x, y, v) in [(1usize, 1usize, 1.0), (2, 1, 2.0), (1, 2, 3.0)] {
            with.far_world = Some(DVec3::splat(v));
            fields.set(x, y, with);
        }
        let pos = far_positions(&fields);
        assert_eq!(pos.get(2, 2), Some(DVec3::splat(2.0)));
        assert_eq!(pos.get(1, 1), Some(DVec3::splat(1.0)));
        assert_eq!(pos.get(4, 4), None);
    }

    #[test]
    fn isolated_pixel_without_far_data_drops_history() {
        use crate::lens::Pose;
        let cam = ThinLensCamera {
            aperture: 0.03,
            focal_length: 0.05,
            focus_distance: 2.0,
            sensor_width: 0.036,
            image_width: 10,
            image_height: 10,
            pose: Pose::look_at(DVec3::ZERO, DVec3::Z, DVec3::Y),
        };
        let hist = Image::filled(5, 5, 1.0f32);
        let valid = Image::filled(5, 5, true);
        let fields = Image::filled(5, 5, FieldColor::default());
        let (_, ok, _) = reproject_far(&hist, &valid, &fields, &cam, &cam);
        assert!(ok.pixels().iter().all(|&v| !v));
        // Static camera: identity where a far position exists.
        let mut fields = fields;
        fields.set(2, 2, FieldColor {
            far_world: Some(DVec3::new(0.3, 0.1, 4.0)),
            ..Default::default()
        });
        let hist = Image::from_fn(5, 5, |x, y| (x + 5 * y) as f32);
        let (out, ok, _) = reproject_far(&hist, &valid, &fields, &cam, &cam);
        assert!(ok.get(2, 2) && ok.get(1, 1));
        assert_eq!(out.get(2, 2), 12.0);
        assert_eq!(out.get(1, 1), 6.0);
    }

    #[test]
    fn cold_start_returns_current() {
        let cur = field(Vec3::new(0.9, 0.1, 0.1), Vec3::new(0.1, 0.2, 0.8), 0.3);
        let p = accumulate_pixel(&cur, None, None, false, &TemporalParams::default());
        assert!((p.merged - cur.total()).abs().max_element() < 1e-6);
        assert_eq!(p.near.hit_ratio, 0.3);
        assert!((p.coc - (8.0 + 12.0 * 0.3)).abs() < 1e-5);
    }

    #[test]
    fn ema_error_decays_geometrically() {
        let c = Vec3::new(0.6, 0.5, 0.4);
        let g = Vec3::ZERO;
        let params = TemporalParams::default();
        let cur = field(c, Vec3::ZERO, 1.0);
        let mut near = NearHistory {
            near: g.extend(1.0),
            hit_ratio: 1.0,
            coc: 20.0,
            moments: Vec2::ZERO,
        };
        let far = FarHistory::default();
        for n in 1..=60 {
            let p = accumulate_pixel(&cur, Some(near), Some(far), false, &params);
            near = p.near;
            let expect = 0.95f32.powi(n) * (g - c).length();
            assert!(((p.merged - c).length() - expect).abs() < 1e-4, "frame {n}");
        }
    }

    #[test]
    fn full_hit_ratio_in_motion_uses_near_only() {
        let cur = field(Vec3::X, Vec3::Y, 1.0);
        let near = NearHistory {
            near: Vec4::new(0.0, 0.0, 0.5, 0.5),
            hit_ratio: 0.5,
            ..Default::default()
        };
        let far = FarHistory {
            far: Vec4::new(0.0, 0.5, 0.0, 0.5),
            coc: 3.0,
        };
        let p = accumulate_pixel(&cur, Some(near), Some(far), true, &TemporalParams::default());
        assert_eq!(p.k, 1.0);
        let n = unpremultiply(p.near.near);
        assert!((p.merged - n).abs().max_element() < 1e-6);
        // Convex combination of the two accumulated fields when static.
        let q = accumulate_pixel(&field(Vec3::X, Vec3::Y, 0.4), Some(near), Some(far), false, &TemporalParams::default());
        assert!(q.k > 0.0 && q.k < 1.0);
        assert!(q.merged.min_element() >= 0.0 && q.merged.max_element() <= 1.0);
    }

    #[test]
    fn constant_luminance_variance_vanishes() {
        let a = TemporalParams::default().alpha;
        let mut m = Vec2::new(0.1, 0.01);
        for n in 1..=300 {
            m = update_moments(m, 0.7, a);
            // Closed form: σ²ₙ = 0.36·αⁿ·(1 − αⁿ).
            let an = a.powi(n);
            assert!((moment_variance(m) - 0.36 * an * (1.0 - an)).abs() < 1e-5, "frame {n}");
        }
        assert!(moment_variance(m) < 1e-6);
    }

    #[test]
    fn alternating_luminance_reaches_ema_fixed_point() {
        let a = TemporalParams::default().alpha;
        let mut m = Vec2::ZERO;
        for i in 0..2000 {
            m = update_moments(m, (i % 2) as f32, a);
        }
        // Closed form for alternating 0/1: σ² = α / (1 + α)².
        assert!((moment_variance(m) - a / ((1.0 + a) * (1.0 + a))).abs() < 1e-5);
        assert!((moment_variance(m) - 0.249_836).abs() < 1e-5);
    }

    #[test]
    fn flicker_spreads_through_blur() {
        let mut m = Image::filled(9, 9, Vec2::new(0.5, 0.25));
        m.set(4, 4, Vec2::new(0.5, 0.5));
        let v = update_variance(&m);
        for y in 0..9 {
            for x in 0..9 {
                let inside = (x as i64 - 4).abs() <= 2 && (y as i64 - 4).abs() <= 2;
                assert_eq!(v.get(x, y) > 0.0, inside, "{x},{y}");
            }
        }
    }
}
