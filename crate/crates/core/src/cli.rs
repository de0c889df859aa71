//! `audiosplat` subcommands. Exit codes: 0 success, 1 runtime failure,
//! 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::field::{export_point_cloud, init_field, load_checkpoint, save_checkpoint, GaussianField};
use crate::metrics::evaluate;
use crate::oracle::{generate_synthetic_scene, write_synthetic_scene, CONFIG_FILE};
use crate::render::{render_waveform, Component};
use crate::scene_io::{load_scene, load_wav, save_wav, RunConfig, Scene};
use crate::spectral::{content_magnitude, stft};
use crate::train::train_with;

#[derive(Debug, Parser)]
#[command(name = "audiosplat", version, about = "Binaural sound field reconstruction with audio Gaussians")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic free-field scene.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(2..))]
        poses: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit a field to a scene.
    Train {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Disable a component: da, sh or pc. Repeatable.
        #[arg(long = "ablate", value_name = "COMPONENT")]
        ablate: Vec<Component>,
        /// Loss history (NDJSON). Defaults to `<out>.history.ndjson`.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Render the source clip at a pose.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        pose: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// MAG, ENV and LRE between two binaural WAVs.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export high-energy Gaussian positions as CSV.
    Export {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 80.0)]
        percentile: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Run configuration stored next to a checkpoint.
pub fn ckpt_config_path(ckpt: &Path) -> PathBuf {
    with_suffix(ckpt, ".toml")
}

pub fn default_history_path(ckpt: &Path) -> PathBuf {
    with_suffix(ckpt, ".history.ndjson")
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// The config a checkpoint was trained with, else the scene's own, else
/// defaults.
fn config_for(ckpt: &Path, scene_dir: &Path) -> Result<RunConfig> {
    for path in [ckpt_config_path(ckpt), scene_dir.join(CONFIG_FILE)] {
        if path.exists() {
            return RunConfig::load(&path).with_context(|| format!("loading {}", path.display()));
        }
    }
    Ok(RunConfig::default())
}

fn check_grid(field: &GaussianField, scene: &Scene) -> Result<()> {
    let s = stft(&scene.source_clip, &scene.stft)?;
    let want = (s.n_bins(), s.n_frames());
    anyhow::ensure!(
        field.layout().dims() == want,
        "checkpoint grid {:?} does not match scene grid {:?}",
        field.layout().dims(),
        want
    );
    Ok(())
}

fn synth(out: &Path, poses: u32, seed: u64) -> Result<()> {
    let base = RunConfig::default();
    let scene = generate_synthetic_scene(poses as usize, seed, &base)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_synthetic_scene(out, &scene)?;
    eprintln!("wrote {poses} poses to {}", out.display());
    Ok(())
}

fn train_cmd(scene_dir: &Path, config: &Path, out: &Path, ablate: &[Component], history: Option<&Path>) -> Result<()> {
    let mut cfg = RunConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    for &c in ablate {
        cfg.train.toggles = cfg.train.toggles.without(c);
    }
    let scene = load_scene(scene_dir, &cfg)?;
    let (field, hist) = train_with(&scene, &cfg.train, &cfg.field, |r| {
        eprintln!("epoch {:>3}  total {:.5}  mono {:.5}", r.epoch, r.total, r.mono_mag);
    })?;
    save_checkpoint(&field, out)?;
    cfg.save(&ckpt_config_path(out))?;
    hist.write(&history.map_or_else(|| default_history_path(out), Path::to_path_buf))?;
    Ok(())
}

fn render_cmd(ckpt: &Path, scene_dir: &Path, pose: &str, out: &Path) -> Result<()> {
    let cfg = config_for(ckpt, scene_dir)?;
    let field = load_checkpoint(ckpt)?;
    let scene = load_scene(scene_dir, &cfg)?;
    check_grid(&field, &scene)?;
    let pose = scene.pose(pose)?;
    let s_src = stft(&scene.source_clip, &scene.stft)?;
    let y = render_waveform(&field, &s_src, &pose, cfg.train.toggles, &cfg.field)?;
    save_wav(&y, out)?;
    Ok(())
}

fn eval_cmd(pred: &Path, reference: &Path, out: &Path) -> Result<()> {
    let (p, r) = (load_wav(pred)?, load_wav(reference)?);
    let cfg = RunConfig::default();
    let report = evaluate(&p, &r, &cfg.stft)?;
    report.write(out)?;
    print!("{report}");
    Ok(())
}

fn export_cmd(ckpt: &Path, scene_dir: &Path, percentile: f64, out: &Path) -> Result<()> {
    let cfg = config_for(ckpt, scene_dir)?;
    let field = load_checkpoint(ckpt)?;
    let scene = load_scene(scene_dir, &cfg)?;
    check_grid(&field, &scene)?;
    let a = content_magnitude(&stft(&scene.source_clip, &scene.stft)?)?;
    let n = export_point_cloud(&field, &a, percentile, out)?;
    eprintln!("exported {n} points");
    Ok(())
}

/// An untrained field for `scene`, as training would start from it.
pub fn fresh_field(scene: &Scene, cfg: &RunConfig) -> Result<GaussianField> {
    let s = stft(&scene.source_clip, &scene.stft)?;
    Ok(init_field(s.grid(), scene.pose_center(), &scene.reference_pose, &cfg.field, cfg.train.seed)?)
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Synth { out, poses, seed } => synth(out, *poses, *seed),
        Command::Train {
            scene,
            config,
            out,
            ablate,
            history,
        } => train_cmd(scene, config, out, ablate, history.as_deref()),
        Command::Render { ckpt, scene, pose, out } => render_cmd(ckpt, scene, pose, out),
        Command::Eval { pred, reference, out } => eval_cmd(pred, reference, out),
        Command::Export {
            ckpt,
            scene,
            percentile,
            out,
        } => export_cmd(ckpt, scene, *percentile, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
