//! Free-field binaural simulator and synthetic scene generator.
//!
//! Two point ears at `p -/+ a * right`, inverse-distance amplitude
//! (unit gain at 1 m) and exact propagation delays. No reflections.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldConfig;
use crate::geometry::{add, norm, scale, sub, ListenerPose, Vec3};
use crate::scene_io::{assemble_scene, save_recordings, PoseRecord, RunConfig, Scene};
use crate::spectral::Waveform;

pub const SINC_TAPS: usize = 32;
pub const CIRCLE_RADIUS: f64 = 2.0;
pub const META_FILE: &str = "meta.toml";
pub const CONFIG_FILE: &str = "config.toml";

const MIN_EAR_DISTANCE: f64 = 1e-3;

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Blackman-windowed sinc tap for offset `x` (samples) from the read point.
fn tap(x: f64) -> f64 {
    let half = SINC_TAPS as f64 / 2.0;
    if x.abs() >= half {
        return 0.0;
    }
    let w = 0.42 + 0.5 * (PI * x / half).cos() + 0.08 * (2.0 * PI * x / half).cos();
    sinc(x) * w
}

/// `x` delayed by `delay` samples (fractional) and scaled by `gain`.
pub fn fractional_delay(x: &[f64], delay: f64, gain: f64) -> Vec<f64> {
    let n = x.len();
    let half = (SINC_TAPS / 2) as isize;
    (0..n)
        .map(|i| {
            let t = i as f64 - delay;
            let base = t.floor() as isize;
            let mut acc = 0.0;
            for m in (base - half + 1)..=(base + half) {
                if m < 0 || m >= n as isize {
                    continue;
                }
                acc += x[m as usize] * tap(t - m as f64);
            }
            gain * acc
        })
        .collect()
}

/// Left and right ear positions of a listener.
pub fn ear_positions(pose: &ListenerPose, head_radius: f64) -> [Vec3; 2] {
    let right = pose.right_axis();
    let p = pose.position();
    [sub(p, scale(right, head_radius)), add(p, scale(right, head_radius))]
}

/// Binaural recording of a mono source at `src_pos` heard at `pose`.
pub fn simulate_free_field(
    src_signal: &Waveform,
    src_pos: Vec3,
    pose: &ListenerPose,
    cfg: &FieldConfig,
) -> Result<Waveform> {
    src_signal.require_channels(1)?;
    let sr = f64::from(src_signal.sample_rate());
    let ears = ear_positions(pose, cfg.head_radius);
    let mut out = Vec::with_capacity(2);
    for ear in ears {
        let d = norm(sub(src_pos, ear));
        if d < MIN_EAR_DISTANCE {
            return Err(Error::Coincident);
        }
        out.push(fractional_delay(src_signal.channel(0), d / cfg.speed_of_sound * sr, 1.0 / d));
    }
    Waveform::new(src_signal.sample_rate(), out)
}

/// White noise restricted to `[lo, hi]` Hz, shaped into raised-cosine
/// bursts.
pub fn noise_bursts(rng: &mut ChaCha8Rng, n: usize, sample_rate: u32, lo: f64, hi: f64) -> Vec<f64> {
    let mut buf: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.sample::<f64, _>(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let sr = f64::from(sample_rate);
    for (k, z) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * sr / n as f64;
        if f < lo || f > hi {
            *z = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let band: Vec<f64> = buf.iter().map(|z| z.re / n as f64).collect();
    let rms = (band.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt().max(1e-12);

    let period = (0.5 * sr) as usize;
    let on = (0.35 * sr) as usize;
    let ramp = (0.02 * sr) as usize;
    let mut out = vec![0.0; n];
    let mut start = (0.05 * sr) as usize;
    while start < n {
        let level = 0.1 * rng.random_range(0.5..1.0) / rms;
        for i in 0..on.min(n - start) {
            let env = if i < ramp {
                0.5 - 0.5 * (PI * i as f64 / ramp as f64).cos()
            } else if i + ramp > on {
                0.5 - 0.5 * (PI * (on - i) as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            out[start + i] = level * env * band[start + i];
        }
        start += period;
    }
    out
}

/// Ground truth that goes with a generated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub seed: u64,
    pub n_poses: usize,
    pub source_position: Vec3,
}

impl SceneMeta {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub scene: Scene,
    pub meta: SceneMeta,
    /// Run configuration naming the source and held-out poses.
    pub config: RunConfig,
    /// Full-length recordings before highpass, as they would be stored.
    pub recordings: Vec<(PoseRecord, Waveform)>,
}

/// Listener poses evenly spaced on a horizontal circle, all facing its
/// centre.
pub fn circle_poses(n_poses: usize, radius: f64) -> Result<Vec<PoseRecord>> {
    (0..n_poses)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / n_poses as f64;
            let pose = ListenerPose::look_at(
                [radius * a.sin(), 0.0, radius * a.cos()],
                [0.0; 3],
                [0.0, 1.0, 0.0],
            )?;
            Ok(PoseRecord {
                id: format!("pose{k}"),
                pose,
            })
        })
        .collect()
}

/// One noise-burst source inside a circle of listeners. `pose0` is the
/// source/reference pose and the last pose is held out; the source sits
/// 1.0-1.3 m from the centre, toward the held-out pose.
pub fn generate_synthetic_scene(n_poses: usize, seed: u64, base: &RunConfig) -> Result<SyntheticScene> {
    generate_with_signal(n_poses, seed, base, None)
}

/// Like [`generate_synthetic_scene`] with an explicit mono source signal.
pub fn generate_with_signal(
    n_poses: usize,
    seed: u64,
    base: &RunConfig,
    signal: Option<Waveform>,
) -> Result<SyntheticScene> {
    if n_poses < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 poses, got {n_poses}")));
    }
    base.validate()?;
    let sr = base.stft.sample_rate;
    let n = base.clip_samples();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Off-centre source on the held-out listener's side of the circle, so
    // that listener hears a clearly different level than the reference.
    let holdout_angle = 2.0 * PI * (n_poses - 1) as f64 / n_poses as f64;
    let angle = holdout_angle + rng.random_range(-0.25..0.25);
    let radius = rng.random_range(1.0..1.3);
    let source_position = [radius * angle.sin(), 0.0, radius * angle.cos()];
    let signal = match signal {
        Some(s) => s,
        None => Waveform::mono(sr, noise_bursts(&mut rng, n, sr, 200.0, 4000.0))?,
    };

    let poses = circle_poses(n_poses, CIRCLE_RADIUS)?;
    let mut recordings = Vec::with_capacity(n_poses);
    for r in poses {
        let w = simulate_free_field(&signal, source_position, &r.pose, &base.field)?;
        // stored as float32, so quantise before anything else sees it
        let w = Waveform::new(
            sr,
            w.into_channels()
                .into_iter()
                .map(|c| c.into_iter().map(|v| f64::from(v as f32)).collect())
                .collect(),
        )?;
        recordings.push((r, w));
    }

    let mut config = base.clone();
    config.scene.source_id = "pose0".into();
    config.scene.holdout = vec![format!("pose{}", n_poses - 1)];
    config.scene.clip_index = 0;
    let scene = assemble_scene(recordings.clone(), &config)?;
    Ok(SyntheticScene {
        scene,
        meta: SceneMeta {
            seed,
            n_poses,
            source_position,
        },
        config,
        recordings,
    })
}

/// Writes recordings, poses, run config and metadata into `dir`.
pub fn write_synthetic_scene(dir: &Path, synth: &SyntheticScene) -> Result<()> {
    save_recordings(dir, &synth.recordings)?;
    synth.config.save(&dir.join(CONFIG_FILE))?;
    let meta = toml::to_string(&synth.meta).expect("meta serializes");
    let path = dir.join(META_FILE);
    fs::write(&path, meta).map_err(|e| Error::io(&path, e))
}
