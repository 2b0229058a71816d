//! Visibility pass: the deferred G-buffer, the sharp all-in-focus image and
//! camera motion vectors.
//!
//! Visibility is resolved by casting one pinhole ray through each
//! (jittered) pixel center. For opaque geometry this matches a z-buffer
//! rasterizer and shares the BVH with the ray-traced passes.

use glam::{DVec3, Vec2, Vec3};

use crate::image::{Image, Rgb};
use crate::lens::ThinLensCamera;
use crate::scene::{Bvh, Scene};

/// Per-pixel G-buffer record.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GPixel {
    /// View-space depth in meters; `+∞` for background.
    pub depth: f32,
    pub normal: Vec3,
    pub albedo: Rgb,
    /// Emission strength of the visible material.
    pub specular: f32,
    /// Screen displacement in pixels, current minus previous.
    pub motion: Vec2,
    /// False where the previous-frame projection failed (disocclusion).
    pub motion_valid: bool,
}

impl GPixel {
    pub fn is_background(&self) -> bool {
        self.depth.is_infinite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GBuffer {
    pub pixels: Image<GPixel>,
    /// Subpixel projection offset used for this frame.
    pub jitter: Vec2,
}

impl GBuffer {
    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> GPixel {
        self.pixels.get(x, y)
    }

    pub fn depth(&self) -> Image<f32> {
        self.pixels.map(|p| p.depth)
    }

    pub fn normals(&self) -> Image<Vec3> {
        self.pixels.map(|p| p.normal)
    }

    pub fn motion(&self) -> Image<Vec2> {
        self.pixels.map(|p| p.motion)
    }

    /// World position of a pixel's visible surface.
    pub fn world_pos(&self, cam: &ThinLensCamera, x: usize, y: usize) -> Option<DVec3> {
        let p = self.get(x, y);
        if p.is_background() {
            return None;
        }
        Some(cam.unproject(
            x as f64 + 0.5 + self.jitter.x as f64,
            y as f64 + 0.5 + self.jitter.y as f64,
            p.depth as f64,
        ))
    }
}

/// Cast one pinhole ray per pixel; record the nearest surface and its
/// shaded color. Motion vectors are left zero.
pub fn render_visibility(scene: &Scene, bvh: &Bvh, cam: &ThinLensCamera, jitter: Vec2) -> (GBuffer, Image<Rgb>) {
    let (w, h) = (cam.image_width as usize, cam.image_height as usize);
    let samples = Image::par_from_fn(w, h, |x, y| {
        let ray = cam.primary_ray(x as f64 + 0.5 + jitter.x as f64, y as f64 + 0.5 + jitter.y as f64);
        match bvh.intersect(scene, &ray) {
            Some(hit) => {
                let depth = ray.direction.dot(cam.pose.forward) * hit.t;
                (
                    GPixel {
                        depth: depth as f32,
                        normal: hit.normal.as_vec3(),
                        albedo: hit.albedo(scene),
                        specular: hit.emissive(scene),
                        motion: Vec2::ZERO,
                        motion_valid: true,
                    },
                    hit.shaded,
                )
            }
            None => (
                GPixel {
                    depth: f32::INFINITY,
                    normal: Vec3::ZERO,
                    albedo: scene.background,
                    specular: 0.0,
                    motion: Vec2::ZERO,
                    motion_valid: true,
                },
                scene.background,
            ),
        }
    });
    let pixels = samples.map(|s| s.0);
    let sharp = samples.map(|s| s.1);
    (GBuffer { pixels, jitter }, sharp)
}

/// Fill the motion channel from camera motion (static geometry).
pub fn compute_motion_vectors(gbuffer: &mut GBuffer, cam_curr: &ThinLensCamera, cam_prev: &ThinLensCamera) {
    let (w, h) = (gbuffer.width(), gbuffer.height());
    let updated = Image::par_from_fn(w, h, |x, y| {
        let mut p = gbuffer.get(x, y);
        p.motion = Vec2::ZERO;
        p.motion_valid = true;
        if let Some(world) = gbuffer.world_pos(cam_curr, x, y) {
            match (cam_curr.project(world), cam_prev.project(world)) {
                (Some(now), Some(before)) => p.motion = (now - before).as_vec2(),
                _ => p.motion_valid = false,
            }
        }
        p
    });
    gbuffer.pixels = updated;
}
