//! Command-line front end: batch rendering to numbered images with
//! per-frame metrics, or hand-off to the live control service.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Parser;

use hybrid_dof::composite::Mode;
use hybrid_dof::fixtures::Fixture;
use hybrid_dof::image::{encode_pfm, to_rgb8, Image, Rgb};
use hybrid_dof::pipeline::{FrameRecord, PassName, PipelineConfig, Renderer};
use hybrid_dof::reference::{ground_truth_dof, ssim, PassTimings};
use hybrid_dof::scene::{load_scene, Scene};

#[derive(Debug, Clone, Parser)]
#[command(name = "dof", version, about = "Hybrid depth-of-field renderer")]
pub struct Args {
    /// Scene file, or a bundled fixture name (occluder, fence, backdrop,
    /// near_wall, constant, ramp).
    #[arg(long)]
    pub scene: String,
    /// Pipeline config (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// hybrid, post-only, rt-only, ground-truth or sharp.
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long, default_value_t = 1)]
    pub frames: u32,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for every random stream; same seed, same bytes.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write this intermediate for every frame.
    #[arg(long)]
    pub dump_pass: Option<PassName>,
    /// Append one JSON record per frame to this file.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Override a named parameter, e.g. `--set m=4`. Repeatable.
    #[arg(long = "set", value_name = "NAME=VALUE")]
    pub set: Vec<String>,
    /// Write 32-bit float PFM files next to the PNGs.
    #[arg(long)]
    pub pfm: bool,
    /// Score each frame against a ground-truth render (slow).
    #[arg(long)]
    pub ssim: bool,
    /// Start the live control service instead of rendering a batch.
    #[arg(long)]
    pub serve: bool,
    #[arg(long, default_value_t = dof_service::DEFAULT_PORT)]
    pub port: u16,
}

pub fn load_scene_arg(arg: &str) -> Result<Scene> {
    let path = Path::new(arg);
    if path.exists() {
        return load_scene(path).with_context(|| format!("loading scene {arg}"));
    }
    match Fixture::from_name(arg) {
        Some(f) => Ok(f.load()?),
        None => bail!("scene {arg:?} is neither a file nor a bundled fixture"),
    }
}

/// The config file (or defaults) with command-line overrides applied,
/// validated before anything renders.
pub fn build_config(args: &Args) -> Result<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(o) = &args.out {
        cfg.output_dir = Some(o.clone());
    }
    for kv in &args.set {
        let (k, v) = kv.split_once('=').with_context(|| format!("--set expects NAME=VALUE, got {kv:?}"))?;
        let v: f64 = v.trim().parse().with_context(|| format!("--set {k}: {v:?} is not a number"))?;
        cfg.set_param(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn write_png(path: &Path, img: &Image<Rgb>) -> Result<()> {
    let (w, h) = img.dims();
    image::save_buffer(path, &to_rgb8(img), w as u32, h as u32, image::ExtendedColorType::Rgb8)
        .with_context(|| format!("writing {}", path.display()))
}

pub fn write_pfm(path: &Path, img: &Image<Rgb>) -> Result<()> {
    std::fs::write(path, encode_pfm(img)).with_context(|| format!("writing {}", path.display()))
}

/// What a batch run produced.
#[derive(Debug, Clone)]
pub struct Summary {
    pub records: Vec<FrameRecord>,
    pub images: Vec<PathBuf>,
    pub mean_timings: PassTimings,
}

pub fn run_batch(args: &Args) -> Result<Summary> {
    let cfg = build_config(args)?;
    let scene = load_scene_arg(&args.scene)?;
    let out_dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut metrics = match &args.metrics {
        Some(p) => {
            let f = File::options().create(true).append(true).open(p);
            Some(BufWriter::new(f.with_context(|| format!("opening {}", p.display()))?))
        }
        None => None,
    };

    let (m, gt_spp, seed) = (cfg.max_rays, cfg.gt_spp, cfg.seed);
    let mut renderer = Renderer::new(scene, cfg)?;
    renderer.set_dump(args.dump_pass);
    let mut summary = Summary {
        records: Vec::new(),
        images: Vec::new(),
        mean_timings: PassTimings::default(),
    };
    let mut timings = Vec::new();
    for _ in 0..args.frames {
        let frame = renderer.render_next()?;
        let score = if args.ssim {
            let gt = ground_truth_dof(renderer.scene(), renderer.bvh(), &frame.camera, gt_spp, seed);
            Some(ssim(&frame.image, &gt)?)
        } else {
            None
        };
        let stem = format!("frame_{:04}", frame.index);
        let png = out_dir.join(format!("{stem}.png"));
        write_png(&png, &frame.image)?;
        if args.pfm {
            write_pfm(&out_dir.join(format!("{stem}.pfm")), &frame.image)?;
        }
        if let Some((pass, img)) = &frame.dump {
            let stem = format!("{}_{:04}", pass.name(), frame.index);
            write_png(&out_dir.join(format!("{stem}.png")), img)?;
            if args.pfm {
                write_pfm(&out_dir.join(format!("{stem}.pfm")), img)?;
            }
        }
        let record = frame.record(m, score);
        if let Some(w) = metrics.as_mut() {
            serde_json::to_writer(&mut *w, &record)?;
            w.write_all(b"\n")?;
        }
        summary.images.push(png);
        summary.records.push(record);
        timings.push(frame.timings);
    }
    if let Some(mut w) = metrics {
        w.flush()?;
    }
    summary.mean_timings = PassTimings::mean(&timings);
    Ok(summary)
}

/// Build the session and block serving it. Startup errors, such as a busy
/// port, are returned before any client connects.
pub fn run_serve(args: &Args) -> Result<()> {
    let cfg = build_config(args)?;
    let scene = load_scene_arg(&args.scene)?;
    let renderer = Renderer::new(scene, cfg)?;
    dof_service::serve(dof_service::Session::new(renderer), args.port)?;
    Ok(())
}
