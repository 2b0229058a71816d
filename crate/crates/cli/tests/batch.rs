use std::path::Path;

use clap::Parser;

use dof_cli::{build_config, run_batch, run_serve, Args};
use hybrid_dof::composite::Mode;
use hybrid_dof::image::decode_pfm;
use hybrid_dof::pipeline::{FrameRecord, PassName};

fn args(out: &Path, extra: &[&str]) -> Args {
    let out = out.to_str().unwrap().to_string();
    let mut v = vec!["dof", "--scene", "occluder", "--out", &out, "--set", "width=64", "--set", "height=36"];
    v.extend_from_slice(extra);
    Args::try_parse_from(v).unwrap()
}

#[test]
fn flags_parse_into_config() {
    let a = Args::try_parse_from([
        "dof",
        "--scene",
        "fence",
        "--mode",
        "post-only",
        "--frames",
        "3",
        "--seed",
        "9",
        "--dump-pass",
        "hit-ratio",
        "--workers",
        "2",
        "--set",
        "m=4",
    ])
    .unwrap();
    assert_eq!(a.frames, 3);
    assert_eq!(a.dump_pass, Some(PassName::HitRatio));
    let cfg = build_config(&a).unwrap();
    assert_eq!((cfg.mode, cfg.seed, cfg.workers, cfg.max_rays), (Mode::PostOnly, 9, 2, 4));
    assert!(Args::try_parse_from(["dof", "--scene", "x", "--mode", "blurry"]).is_err());
    assert!(Args::try_parse_from(["dof", "--scene", "x", "--dump-pass", "nope"]).is_err());
}

#[test]
fn batch_writes_images_metrics_and_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let metrics = dir.path().join("metrics.jsonl");
    let m = metrics.to_str().unwrap().to_string();
    let a = args(dir.path(), &["--frames", "3", "--metrics", &m, "--dump-pass", "coc", "--pfm"]);
    let s = run_batch(&a).unwrap();
    assert_eq!(s.images.len(), 3);
    for i in 0..3 {
        let png = image::open(dir.path().join(format!("frame_{i:04}.png"))).unwrap();
        assert_eq!((png.width(), png.height()), (64, 36));
        let pfm = std::fs::read(dir.path().join(format!("frame_{i:04}.pfm"))).unwrap();
        assert_eq!(decode_pfm(&pfm).unwrap().dims(), (64, 36));
        assert!(dir.path().join(format!("coc_{i:04}.png")).exists());
    }
    let lines: Vec<FrameRecord> = std::fs::read_to_string(&metrics)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    for (l, r) in lines.iter().zip(&s.records) {
        assert_eq!((l.frame, l.mode, l.m, l.total_rays), (r.frame, r.mode, r.m, r.total_rays));
        for (k, v) in &r.pass_ms {
            assert!((l.pass_ms[k] - v).abs() <= 1e-9 * v.abs().max(1.0), "{k}");
        }
    }
    assert_eq!(lines.iter().map(|r| r.frame).collect::<Vec<_>>(), [0, 1, 2]);
    assert!(lines.iter().all(|r| r.pass_ms.contains_key("ray_trace") && r.ssim.is_none()));
}

#[test]
fn png_matches_float_dump() {
    let dir = tempfile::tempdir().unwrap();
    run_batch(&args(dir.path(), &["--pfm"])).unwrap();
    let png = image::open(dir.path().join("frame_0000.png")).unwrap().to_rgb8();
    let pfm = decode_pfm(&std::fs::read(dir.path().join("frame_0000.pfm")).unwrap()).unwrap();
    for (x, y, p) in png.enumerate_pixels() {
        let c = pfm.get(x as usize, y as usize);
        for (k, v) in [c.x, c.y, c.z].into_iter().enumerate() {
            assert!((p[k] as f32 / 255.0 - v.clamp(0.0, 1.0)).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}

#[test]
fn same_seed_writes_identical_bytes() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&d1, &d2] {
        run_batch(&args(d.path(), &["--frames", "2", "--seed", "5", "--pfm"])).unwrap();
    }
    for name in ["frame_0001.png", "frame_0001.pfm"] {
        assert_eq!(
            std::fs::read(d1.path().join(name)).unwrap(),
            std::fs::read(d2.path().join(name)).unwrap()
        );
    }
}

#[test]
fn ssim_flag_scores_frames() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_batch(&args(dir.path(), &["--ssim", "--set", "gt_spp=16"])).unwrap();
    let v = s.records[0].ssim.unwrap();
    assert!(v > 0.5 && v <= 1.0, "{v}");
}

#[test]
fn bad_inputs_fail_before_rendering() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let err = run_batch(&args(&out, &["--set", "m=65"])).unwrap_err();
    assert!(err.to_string().contains("[0, 64]"), "{err}");
    assert!(!out.exists());
    let a = Args::try_parse_from(["dof", "--scene", "/no/such/scene.toml", "--out", out.to_str().unwrap()]).unwrap();
    assert!(run_batch(&a).unwrap_err().to_string().contains("neither a file"));
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "width = 320\nwobble = 1\n").unwrap();
    let c = cfg.to_str().unwrap().to_string();
    assert!(run_batch(&args(&out, &["--config", &c])).is_err());
    assert!(run_batch(&args(&out, &["--set", "m"])).is_err());
}

#[test]
fn config_file_and_scene_path_are_read() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "width = 40\nheight = 24\nmode = \"sharp\"\n").unwrap();
    let scene = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenes/ramp.toml");
    let out = dir.path().to_str().unwrap();
    let a = Args::try_parse_from(["dof", "--scene", scene, "--config", cfg.to_str().unwrap(), "--out", out]).unwrap();
    let s = run_batch(&a).unwrap();
    assert_eq!(s.records[0].mode, Mode::Sharp);
    let png = image::open(&s.images[0]).unwrap();
    assert_eq!((png.width(), png.height()), (40, 24));
}

#[test]
fn serve_reports_busy_port() {
    let holder = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = holder.local_addr().unwrap().port().to_string();
    let a = Args::try_parse_from(["dof", "--scene", "occluder", "--serve", "--port", &port]).unwrap();
    let err = run_serve(&a).unwrap_err();
    assert!(err.to_string().contains("cannot bind"), "{err}");
}
