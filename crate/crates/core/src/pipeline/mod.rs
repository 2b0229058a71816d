//! Frame loop: runs every pass in order for one camera and carries the
//! temporal state between frames.
//!
//! Passes run one after another; each is data-parallel on the renderer's
//! own rayon pool. No pass reduces in a thread-dependent order, so the
//! worker count never changes an output value.

mod config;
mod path;

use std::str::FromStr;
use std::time::{Duration, Instant};

use glam::Vec2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{ConfigError, LensOverrides, PipelineConfig, TaaConfig, PARAM_NAMES};
pub use path::{CameraPath, Keyframe};

use crate::composite::{composite, Branches, Mode, RtBranch};
use crate::image::{half_dims, scalar_to_rgb, Image, Rgb};
use crate::lens::{LensError, Pose, ThinLensCamera};
use crate::postprocess::{downscale_half, mainfilter81, median3x3, prefilter9, tile_max_coc};
use crate::raymask::{build_ray_mask, RayMask};
use crate::reconstruct::reconstruct;
use crate::reference::{ground_truth_dof, PassTimings};
use crate::rtdof::{trace_frame, TraceContext};
use crate::scene::{Bvh, Scene, SceneError};
use crate::taa::{halton_jitter, taa_resolve, TaaHistory};
use crate::temporal::{half_res_motion, TemporalState};
use crate::visibility::{compute_motion_vectors, render_visibility};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Lens(#[from] LensError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Intermediate images that can be dumped for inspection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PassName {
    Sharp,
    Depth,
    Coc,
    Post,
    Bokeh,
    Mask,
    Rt,
    HitRatio,
    Variance,
    Recon,
    Final,
}

impl PassName {
    pub const ALL: [PassName; 11] = [
        PassName::Sharp,
        PassName::Depth,
        PassName::Coc,
        PassName::Post,
        PassName::Bokeh,
        PassName::Mask,
        PassName::Rt,
        PassName::HitRatio,
        PassName::Variance,
        PassName::Recon,
        PassName::Final,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PassName::Sharp => "sharp",
            PassName::Depth => "depth",
            PassName::Coc => "coc",
            PassName::Post => "post",
            PassName::Bokeh => "bokeh",
            PassName::Mask => "mask",
            PassName::Rt => "rt",
            PassName::HitRatio => "hit-ratio",
            PassName::Variance => "variance",
            PassName::Recon => "recon",
            PassName::Final => "final",
        }
    }
}

impl FromStr for PassName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        PassName::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<_> = PassName::ALL.iter().map(|p| p.name()).collect();
            format!("unknown pass {s:?}; expected one of {}", names.join(", "))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameStats {
    pub total_rays: u64,
    /// Half-res pixel count per ray count `0..=m`.
    pub ray_histogram: Vec<u64>,
    /// Mean full-res motion vector length.
    pub mean_motion_px: f32,
    pub jitter: [f32; 2],
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub index: u64,
    pub mode: Mode,
    pub camera: ThinLensCamera,
    pub image: Image<Rgb>,
    pub timings: PassTimings,
    pub stats: FrameStats,
    /// The requested intermediate, as RGB.
    pub dump: Option<(PassName, Image<Rgb>)>,
}

/// One metrics record per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: u64,
    pub mode: Mode,
    pub m: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    pub total_rays: u64,
    /// Milliseconds per pass, keyed by pass name.
    pub pass_ms: std::collections::BTreeMap<String, f64>,
    pub fps: f64,
}

impl Frame {
    pub fn record(&self, m: u32, ssim: Option<f64>) -> FrameRecord {
        FrameRecord {
            frame: self.index,
            mode: self.mode,
            m,
            ssim,
            total_rays: self.stats.total_rays,
            pass_ms: self
                .timings
                .rows()
                .iter()
                .map(|(k, d)| (k.to_string(), d.as_secs_f64() * 1e3))
                .collect(),
            fps: self.timings.fps(),
        }
    }
}

#[derive(Debug, Clone, Default)]
struct History {
    temporal: Option<TemporalState>,
    taa_sharp: TaaHistory,
    taa_post: TaaHistory,
    taa_final: TaaHistory,
    prev_camera: Option<ThinLensCamera>,
}

pub struct Renderer {
    scene: Scene,
    bvh: Bvh,
    config: PipelineConfig,
    path: Option<CameraPath>,
    pool: std::sync::Arc<rayon::ThreadPool>,
    history: History,
    frame_index: u64,
    dump: Option<PassName>,
}

fn fallback_pose() -> Pose {
    Pose::look_at(glam::DVec3::ZERO, glam::DVec3::Z, glam::DVec3::Y)
}

fn build_pool(workers: usize) -> Result<std::sync::Arc<rayon::ThreadPool>, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map(std::sync::Arc::new)
        .map_err(|e| PipelineError::Pool(e.to_string()))
}

impl Renderer {
    /// Validates the config, builds the BVH and loads the camera path, if any.
    pub fn new(scene: Scene, config: PipelineConfig) -> Result<Self, PipelineError> {
        let path = match &config.camera_path {
            Some(p) => Some(CameraPath::load(p)?),
            None => None,
        };
        Self::with_path(scene, config, path)
    }

    pub fn with_path(scene: Scene, config: PipelineConfig, path: Option<CameraPath>) -> Result<Self, PipelineError> {
        config.validate()?;
        let bvh = Bvh::build(&scene)?;
        let pool = build_pool(config.workers)?;
        let r = Self {
            scene,
            bvh,
            config,
            path,
            pool,
            history: History::default(),
            frame_index: 0,
            dump: None,
        };
        r.base_camera().validate()?;
        Ok(r)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn bvh(&self) -> &Bvh {
        &self.bvh
    }

    pub fn frame_index(&self) -> u64 {
        self.frame_index
    }

    /// Replace the configuration between frames. History is dropped when
    /// the resolution changes; the pool is rebuilt when the worker count does.
    pub fn set_config(&mut self, config: PipelineConfig) -> Result<(), PipelineError> {
        config.validate()?;
        if config.workers != self.config.workers {
            self.pool = build_pool(config.workers)?;
        }
        let resized = (config.width, config.height) != (self.config.width, self.config.height);
        let old = std::mem::replace(&mut self.config, config);
        if let Err(e) = self.base_camera().validate() {
            self.config = old;
            return Err(e.into());
        }
        if resized {
            self.reset_history();
        }
        Ok(())
    }

    pub fn set_dump(&mut self, pass: Option<PassName>) {
        self.dump = pass;
    }

    /// Forget all temporal history; the next frame starts cold.
    pub fn reset_history(&mut self) {
        self.history = History::default();
    }

    /// Scene camera defaults with the config's lens overrides and resolution.
    pub fn base_camera(&self) -> ThinLensCamera {
        let c = &self.config;
        let mut cam = match &self.scene.camera {
            Some(d) => ThinLensCamera::from_defaults(d, c.width, c.height),
            None => ThinLensCamera {
                aperture: 0.06,
                focal_length: 0.05,
                focus_distance: 1.6,
                sensor_width: 0.036,
                image_width: c.width,
                image_height: c.height,
                pose: fallback_pose(),
            },
        };
        let o = &c.lens;
        cam.aperture = o.aperture.unwrap_or(cam.aperture);
        cam.focal_length = o.focal_length.unwrap_or(cam.focal_length);
        cam.focus_distance = o.focus_distance.unwrap_or(cam.focus_distance);
        cam.sensor_width = o.sensor_width.unwrap_or(cam.sensor_width);
        cam
    }

    /// Camera for frame `index`: the path sampled at `index · frame_dt`,
    /// or the base camera.
    pub fn camera_for_frame(&self, index: u64) -> ThinLensCamera {
        let base = self.base_camera();
        match &self.path {
            Some(p) => p.camera_at(index as f64 * self.config.frame_dt, &base),
            None => base,
        }
    }

    pub fn render_next(&mut self) -> Result<Frame, PipelineError> {
        let cam = self.camera_for_frame(self.frame_index);
        self.render_with_camera(cam)
    }

    /// Render the next frame from an explicit camera (live sessions).
    pub fn render_with_camera(&mut self, cam: ThinLensCamera) -> Result<Frame, PipelineError> {
        cam.validate()?;
        let pool = self.pool.clone();
        let frame = pool.install(|| self.render_inner(cam));
        self.frame_index += 1;
        Ok(frame)
    }

    fn render_inner(&mut self, cam: ThinLensCamera) -> Frame {
        let start = Instant::now();
        let cfg = self.config.clone();
        let index = self.frame_index;
        let mode = cfg.mode;
        let mut t = PassTimings::default();
        let mut stats = FrameStats::default();
        let mut dump: Option<(PassName, Image<Rgb>)> = None;
        let want = self.dump;
        let mut keep = |name: PassName, make: &dyn Fn() -> Image<Rgb>| {
            if want == Some(name) {
                dump = Some((name, make()));
            }
        };

        if mode == Mode::GroundTruth {
            let clock = Instant::now();
            let image = ground_truth_dof(&self.scene, &self.bvh, &cam, cfg.gt_spp, cfg.seed);
            t.visibility = clock.elapsed();
            t.total = start.elapsed();
            keep(PassName::Final, &|| image.clone());
            self.history.prev_camera = Some(cam);
            return Frame {
                index,
                mode,
                camera: cam,
                image,
                timings: t,
                stats,
                dump,
            };
        }

        let jitter = if cfg.taa.any() { halton_jitter(index) } else { Vec2::ZERO };
        stats.jitter = jitter.to_array();

        // Visibility and motion.
        let clock = Instant::now();
        let (mut gbuffer, sharp_raw) = render_visibility(&self.scene, &self.bvh, &cam, jitter);
        let prev_cam = self.history.prev_camera.unwrap_or(cam);
        compute_motion_vectors(&mut gbuffer, &cam, &prev_cam);
        let full_motion = gbuffer.pixels.map(|p| p.motion_valid.then_some(p.motion));
        let depth = gbuffer.depth();
        t.visibility = clock.elapsed();
        let n = gbuffer.pixels.len().max(1) as f32;
        stats.mean_motion_px = gbuffer.pixels.pixels().iter().map(|p| p.motion.length()).sum::<f32>() / n;

        let mut taa_time = Duration::ZERO;
        let sharp = if cfg.taa.sharp {
            let clock = Instant::now();
            let s = taa_resolve(&sharp_raw, &mut self.history.taa_sharp, &full_motion, cfg.taa.blend);
            taa_time += clock.elapsed();
            s
        } else {
            sharp_raw
        };
        keep(PassName::Sharp, &|| sharp.clone());
        keep(PassName::Depth, &|| scalar_to_rgb(&depth.map(|z| if z.is_finite() { z } else { 0.0 }), 0.0, 10.0));

        if mode == Mode::Sharp {
            let image = if cfg.taa.final_image {
                let clock = Instant::now();
                let s = taa_resolve(&sharp, &mut self.history.taa_final, &full_motion, cfg.taa.blend);
                taa_time += clock.elapsed();
                s
            } else {
                sharp
            };
            t.taa = taa_time;
            t.total = start.elapsed();
            keep(PassName::Final, &|| image.clone());
            self.history.prev_camera = Some(cam);
            return Frame {
                index,
                mode,
                camera: cam,
                image,
                timings: t,
                stats,
                dump,
            };
        }

        // Post-process branch.
        let clock = Instant::now();
        let layer = downscale_half(&sharp, &gbuffer, &cam);
        let tiles = tile_max_coc(&layer.coc);
        let pre = prefilter9(&layer, &tiles);
        let main = mainfilter81(&pre, &tiles, &cfg.filter_params());
        t.post_process = clock.elapsed();
        keep(PassName::Coc, &|| scalar_to_rgb(&layer.coc, 0.0, 16.0));

        let clock = Instant::now();
        let post_color = median3x3(&main.map(|p| p.color));
        let bokeh = median3x3(&main.map(|p| p.bokeh));
        t.median = clock.elapsed();

        let half_motion = half_res_motion(&gbuffer);
        let post_color = if cfg.taa.post {
            let clock = Instant::now();
            let p = taa_resolve(&post_color, &mut self.history.taa_post, &half_motion, cfg.taa.blend);
            taa_time += clock.elapsed();
            p
        } else {
            post_color
        };
        keep(PassName::Post, &|| post_color.clone());
        keep(PassName::Bokeh, &|| scalar_to_rgb(&bokeh, 0.0, 1.0));

        // Ray-traced branch.
        let (hw, hh) = half_dims(gbuffer.width(), gbuffer.height());
        let mut rt_out = None;
        if mode.uses_rays() {
            let temporal = match self.history.temporal.take() {
                Some(s) if s.dims() == (hw, hh) => s,
                _ => TemporalState::new(hw, hh),
            };
            let mut temporal = temporal;

            let clock = Instant::now();
            let params = cfg.mask_params();
            let mask = if mode == Mode::RtOnly {
                let mut m = RayMask::zeros(hw, hh, params);
                m.counts = Image::filled(hw, hh, params.max_rays);
                m
            } else {
                build_ray_mask(&gbuffer, &layer.depth, &temporal.variance, &cam, params)
            };
            t.gbuffer_blur = clock.elapsed();
            keep(PassName::Mask, &|| scalar_to_rgb(&mask.visualize(), 0.0, 1.0));

            let clock = Instant::now();
            let ctx = TraceContext {
                scene: &self.scene,
                bvh: &self.bvh,
                cam: &cam,
                band: cfg.epsilon_band.unwrap_or(0.05 * cam.focus_distance),
                jitter,
                seed: cfg.seed,
                frame: index,
            };
            let (fields, ray_stats) = trace_frame(&ctx, &mask);
            t.ray_trace = clock.elapsed();
            stats.total_rays = ray_stats.total_rays;
            stats.ray_histogram = ray_stats.histogram;
            keep(PassName::Rt, &|| fields.map(|f| f.total()));

            let clock = Instant::now();
            let accum = temporal.accumulate_frame(&fields, &gbuffer, &layer.depth, &cam, &cfg.temporal_params());
            t.accumulation = clock.elapsed();
            keep(PassName::HitRatio, &|| scalar_to_rgb(&accum.hit_ratio, 0.0, 1.0));
            keep(PassName::Variance, &|| scalar_to_rgb(&temporal.variance, 0.0, 1e-3));

            let clock = Instant::now();
            let recon = reconstruct(&accum, &temporal.variance, &cfg.reconstruct_params());
            t.recon_composite = clock.elapsed();
            keep(PassName::Recon, &|| recon.color.clone());
            self.history.temporal = Some(temporal);
            rt_out = Some((recon, accum.available));
        } else {
            self.history.temporal = None;
        }

        let clock = Instant::now();
        let branches = Branches {
            post: &post_color,
            bokeh: &bokeh,
            rt: rt_out.as_ref().map(|(recon, available)| RtBranch {
                color: &recon.color,
                hit_ratio: &recon.hit_ratio,
                available,
            }),
        };
        let composed = composite(&sharp, &depth, &cam, branches, mode, &cfg.composite_params());
        t.recon_composite += clock.elapsed();

        let image = if cfg.taa.final_image {
            let clock = Instant::now();
            let f = taa_resolve(&composed, &mut self.history.taa_final, &full_motion, cfg.taa.blend);
            taa_time += clock.elapsed();
            f
        } else {
            composed
        };
        t.taa = taa_time;
        keep(PassName::Final, &|| image.clone());
        self.history.prev_camera = Some(cam);
        t.total = start.elapsed();
        Frame {
            index,
            mode,
            camera: cam,
            image,
            timings: t,
            stats,
            dump,
        }
    }
}

/// Render `frames` frames from the start of the configured path.
pub fn run(scene: Scene, config: PipelineConfig, frames: u32) -> Result<Vec<Frame>, PipelineError> {
    let mut r = Renderer::new(scene, config)?;
    (0..frames).map(|_| r.render_next()).collect()
}
