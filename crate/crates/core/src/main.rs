//! Command-line interface: generate synthetic scenes, train, render novel
//! views with depth maps, evaluate held-out views, and run the verification
//! suites.
//!
//! Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric fault,
//! 5 verification failure.

use clap::{Args, Parser, Subcommand};
use raymix::data::{load_scene, select_views, SceneManifest};
use raymix::imgio::{write_depth_png, write_json, write_png};
use raymix::loss::DatasetProfile;
use raymix::metrics::MetricReport;
use raymix::pipeline::render_view;
use raymix::synthetic::{render_synthetic_gt, transform_rows, SyntheticSceneDesc};
use raymix::trainer::{load_checkpoint, train, Config};
use raymix::{Error, Result};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "raymix",
    about = "Mixture-density ray modeling for sparse-view radiance fields",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Configuration overrides as dotted key=value pairs,
    /// e.g. --set train.batch_size=128
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Overrides {
    fn apply(&self, cfg: &mut Config) -> Result<()> {
        for pair in &self.set {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got '{pair}'")))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene: manifest, images, and depth maps.
    Synth {
        /// Scene descriptor JSON.
        #[arg(long)]
        scene: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a scene manifest.
    Train {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of training views (default: every frame).
        #[arg(long)]
        views: Option<usize>,
        /// Dataset profile for the balancing weights and view protocol.
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Render every frame of a manifest from a checkpoint.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated frame indices (default: all).
        #[arg(long, value_delimiter = ',')]
        frames: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render the held-out views of a scene and report metrics.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        /// Training-view count defining the held-out split.
        #[arg(long)]
        views: usize,
        #[arg(long, default_value = "desk")]
        profile: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run verification suites and exit nonzero on failure.
    Verify {
        /// Suite name or "all".
        #[arg(long, default_value = "all")]
        suite: String,
    },
}

fn cmd_synth(desc_path: &Path, out: &Path) -> Result<()> {
    let desc: SyntheticSceneDesc = raymix::imgio::read_json(desc_path)?;
    let scene = desc.scene();
    scene.validate()?;
    let cameras = desc.cameras()?;
    std::fs::create_dir_all(out.join("images")).map_err(|e| raymix::Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    std::fs::create_dir_all(out.join("depth")).map_err(|e| raymix::Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let mut frames = Vec::with_capacity(cameras.len());
    for (i, cam) in cameras.iter().enumerate() {
        let gt = render_synthetic_gt(&scene, cam, desc.near, desc.far)?;
        let rel = format!("images/r_{i:03}.png");
        write_png(&out.join(&rel), &gt.rgb)?;
        write_depth_png(
            &out.join(format!("depth/r_{i:03}.png")),
            cam.width,
            cam.height,
            &gt.depth,
        )?;
        frames.push(raymix::data::ManifestFrame {
            file_path: rel,
            transform_matrix: transform_rows(cam),
        });
    }
    let manifest = SceneManifest {
        camera_angle_x: desc.camera_angle_x,
        near: desc.near,
        far: desc.far,
        background: desc.background,
        width: Some(desc.image_size[0]),
        height: Some(desc.image_size[1]),
        frames,
    };
    raymix::data::write_manifest(&manifest, &out.join("manifest.json"))?;
    println!(
        "wrote {} views of '{}' to {}",
        cameras.len(),
        desc.name,
        out.display()
    );
    Ok(())
}

fn cmd_train(
    scene_path: &Path,
    out: &Path,
    views: Option<usize>,
    profile: Option<&str>,
    seed: Option<u64>,
    overrides: &Overrides,
) -> Result<()> {
    let mut cfg = Config::default();
    if let Some(p) = profile {
        cfg.train.profile = p.parse()?;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    overrides.apply(&mut cfg)?;

    let scene = load_scene(scene_path)?;
    let k = views.unwrap_or(scene.n_frames());
    let split = select_views(scene.n_frames(), k, cfg.train.profile.protocol())?;
    std::fs::create_dir_all(out).map_err(|e| raymix::Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    write_json(&out.join("config.json"), &cfg)?;

    println!(
        "training on views {:?} ({} held out), profile {}",
        split.train,
        split.test.len(),
        cfg.train.profile
    );
    let outcome = train(&scene, &split.train, &cfg, out)?;
    println!(
        "done: {} steps, final loss {:.6e} (mse {:.6e}); checkpoint at {}",
        outcome.total_steps,
        outcome.final_loss.total,
        outcome.final_loss.mse,
        outcome.checkpoint_path.display()
    );
    Ok(())
}

fn cmd_render(ckpt: &Path, scene_path: &Path, out: &Path, frames: &[usize], seed: u64) -> Result<()> {
    let ckpt = load_checkpoint(ckpt)?;
    let scene = load_scene(scene_path)?;
    let all: Vec<usize> = (0..scene.n_frames()).collect();
    let frames = if frames.is_empty() { &all } else { frames };
    for &f in frames {
        if f >= scene.n_frames() {
            return Err(Error::Domain(format!(
                "frame {f} out of range ({} frames)",
                scene.n_frames()
            )));
        }
        let view = render_view(
            &ckpt.params,
            &scene.cameras[f],
            scene.near,
            scene.far,
            ckpt.header.n_coarse,
            ckpt.header.n_fine,
            scene.background,
            raymix::trainer::render_seed(seed, f),
        )?;
        write_png(&out.join(format!("r_{f:03}.png")), &view.rgb)?;
        write_depth_png(
            &out.join(format!("depth_{f:03}.png")),
            view.rgb.width,
            view.rgb.height,
            &view.depth,
        )?;
        println!("rendered frame {f}");
    }
    Ok(())
}

fn cmd_eval(
    ckpt: &Path,
    scene_path: &Path,
    views: usize,
    profile: &str,
    out: &Path,
    seed: u64,
) -> Result<()> {
    let profile: DatasetProfile = profile.parse()?;
    let ckpt = load_checkpoint(ckpt)?;
    let scene = load_scene(scene_path)?;
    let split = select_views(scene.n_frames(), views, profile.protocol())?;
    if split.test.is_empty() {
        return Err(Error::Domain("no held-out views under this split".into()));
    }
    let scene_name = scene_path
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into());
    let mut rows = String::from("scene,view,psnr,ssim,avg_err\n");
    let mut mean_psnr = 0.0;
    let mut mean_ssim = 0.0;
    let mut finite = 0usize;
    for &f in &split.test {
        let view = render_view(
            &ckpt.params,
            &scene.cameras[f],
            scene.near,
            scene.far,
            ckpt.header.n_coarse,
            ckpt.header.n_fine,
            scene.background,
            raymix::trainer::render_seed(seed, f),
        )?;
        let report = MetricReport::compute(&view.rgb, &scene.images[f])?;
        rows.push_str(&format!(
            "{scene_name},{f},{},{:.6},{:.6}\n",
            report.psnr, report.ssim, report.avg_err
        ));
        if let raymix::metrics::PsnrResult::Db(db) = report.psnr {
            mean_psnr += db;
            finite += 1;
        }
        mean_ssim += report.ssim;
        println!(
            "view {f}: psnr {} ssim {:.4} avg_err {:.4}",
            report.psnr, report.ssim, report.avg_err
        );
    }
    std::fs::create_dir_all(out).map_err(|e| raymix::Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    raymix::imgio::atomic_write(&out.join("report.csv"), rows.as_bytes())?;
    if finite > 0 {
        println!(
            "mean over {} views: psnr {:.4} ssim {:.4} (2-term avg_err, no perceptual metric)",
            split.test.len(),
            mean_psnr / finite as f64,
            mean_ssim / split.test.len() as f64
        );
    }
    Ok(())
}

fn cmd_verify(suite: &str) -> Result<()> {
    let reports = raymix::verify::run_suites(suite)?;
    let mut failed = 0;
    for r in &reports {
        println!(
            "{}: {} ({:.2}s) {}",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.seconds,
            r.details
        );
        if !r.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Error::Verification(format!("{failed} suite(s) failed")));
    }
    Ok(())
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth { scene, out } => cmd_synth(&scene, &out),
        Command::Train {
            scene,
            out,
            views,
            profile,
            seed,
            overrides,
        } => cmd_train(&scene, &out, views, profile.as_deref(), seed, &overrides),
        Command::Render {
            ckpt,
            scene,
            out,
            frames,
            seed,
        } => cmd_render(&ckpt, &scene, &out, &frames, seed),
        Command::Eval {
            ckpt,
            scene,
            views,
            profile,
            out,
            seed,
        } => cmd_eval(&ckpt, &scene, views, &profile, &out, seed),
        Command::Verify { suite } => cmd_verify(&suite),
    }
}

fn main() {
    if let Err(e) = real_main() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
