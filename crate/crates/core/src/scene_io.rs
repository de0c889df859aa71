//! WAV audio, pose files, clip segmentation and the run configuration.
//!
//! A scene directory holds `poses.txt` and one `<id>.wav` per pose.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldConfig;
use crate::geometry::{ListenerPose, Quaternion, Vec3};
use crate::spectral::{highpass_150, StftConfig, Waveform};
use crate::train::TrainConfig;

pub const POSES_FILE: &str = "poses.txt";

/// Reads a 1- or 2-channel PCM16 or float32 WAV file.
pub fn load_wav(path: &Path) -> Result<Waveform> {
    let malformed = |message: String| Error::MalformedWav {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::Unsupported => Error::UnsupportedFormat("unsupported codec".into()),
        other => malformed(other.to_string()),
    })?;
    let spec = reader.spec();
    let n_ch = spec.channels as usize;
    if !(1..=2).contains(&n_ch) {
        return Err(Error::UnsupportedFormat(format!("{n_ch} channels")));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| malformed(e.to_string()))?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| malformed(e.to_string()))?,
        (fmt, bits) => {
            let kind = if fmt == hound::SampleFormat::Int { "PCM" } else { "float" };
            return Err(Error::UnsupportedFormat(format!("{bits}-bit {kind}")));
        }
    };
    let mut channels = vec![Vec::with_capacity(interleaved.len() / n_ch); n_ch];
    for (i, v) in interleaved.into_iter().enumerate() {
        channels[i % n_ch].push(v);
    }
    Waveform::new(spec.sample_rate, channels)
}

/// Writes interleaved IEEE float32.
pub fn save_wav(x: &Waveform, path: &Path) -> Result<()> {
    let spec = hound::WavSpec {
        channels: x.n_channels() as u16,
        sample_rate: x.sample_rate(),
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::MalformedWav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for i in 0..x.len() {
        for ch in x.channels() {
            writer.write_sample(ch[i] as f32).map_err(to_err)?;
        }
    }
    writer.finalize().map_err(to_err)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseRecord {
    pub id: String,
    pub pose: ListenerPose,
}

/// Parses `id px py pz qw qx qy qz` lines; `#` starts a comment.
pub fn parse_poses(text: &str, path: &Path) -> Result<Vec<PoseRecord>> {
    let mut out: Vec<PoseRecord> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::PoseParse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", fields.len())));
        }
        let mut v = [0.0; 7];
        for (slot, tok) in v.iter_mut().zip(&fields[1..]) {
            *slot = tok
                .parse::<f64>()
                .map_err(|_| err(format!("invalid number `{tok}`")))?;
        }
        let id = fields[0].to_string();
        if out.iter().any(|r| r.id == id) {
            return Err(err(format!("duplicate pose id `{id}`")));
        }
        let pose = ListenerPose::normalized(
            [v[0], v[1], v[2]],
            Quaternion::from_array([v[3], v[4], v[5], v[6]]),
        )
        .map_err(|e| err(e.to_string()))?;
        out.push(PoseRecord { id, pose });
    }
    Ok(out)
}

pub fn load_poses(path: &Path) -> Result<Vec<PoseRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_poses(&text, path)
}

pub fn format_poses(records: &[PoseRecord]) -> String {
    let mut out = String::from("# id px py pz qw qx qy qz\n");
    for r in records {
        let p = r.pose.position();
        let q = r.pose.orientation();
        writeln!(
            out,
            "{} {:?} {:?} {:?} {:?} {:?} {:?} {:?}",
            r.id, p[0], p[1], p[2], q.w, q.x, q.y, q.z
        )
        .expect("write to string");
    }
    out
}

pub fn save_poses(records: &[PoseRecord], path: &Path) -> Result<()> {
    fs::write(path, format_poses(records)).map_err(|e| Error::io(path, e))
}

/// Which recordings play which role, and how they are cut.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub source_id: String,
    pub holdout: Vec<String>,
    pub clip_seconds: f64,
    pub clip_index: usize,
    /// Whether the source pose is also a training target.
    pub source_is_target: bool,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            source_id: "pose0".into(),
            holdout: vec!["pose7".into()],
            clip_seconds: 3.0,
            clip_index: 0,
            source_is_target: true,
        }
    }
}

/// Every tunable of a run, as stored in the TOML config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub stft: StftConfig,
    pub field: FieldConfig,
    pub train: TrainConfig,
    pub scene: SceneConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.field.validate()?;
        self.train.validate()?;
        if !(self.scene.clip_seconds > 0.0 && self.scene.clip_seconds.is_finite()) {
            return Err(Error::InvalidConfig("clip_seconds must be > 0".into()));
        }
        Ok(())
    }

    pub fn clip_samples(&self) -> usize {
        (self.scene.clip_seconds * f64::from(self.stft.sample_rate)).round() as usize
    }
}

/// A pose with its (highpassed, clipped) binaural recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub id: String,
    pub pose: ListenerPose,
    pub audio: Waveform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub source_id: String,
    pub source_clip: Waveform,
    pub reference_pose: ListenerPose,
    pub targets: Vec<Target>,
    pub holdout: Vec<Target>,
    pub sample_rate: u32,
    pub clip_seconds: f64,
    pub stft: StftConfig,
}

impl Scene {
    /// Mean position over every known pose.
    pub fn pose_center(&self) -> Vec3 {
        let mut c = [0.0; 3];
        let mut n = 0.0;
        let mut seen: Vec<&str> = Vec::new();
        let reference = std::iter::once((self.source_id.as_str(), &self.reference_pose));
        let rest = self
            .targets
            .iter()
            .chain(&self.holdout)
            .map(|t| (t.id.as_str(), &t.pose));
        for (id, pose) in reference.chain(rest) {
            if seen.contains(&id) {
                continue;
            }
            seen.push(id);
            let p = pose.position();
            for k in 0..3 {
                c[k] += p[k];
            }
            n += 1.0;
        }
        c.map(|v| v / n)
    }

    pub fn find(&self, id: &str) -> Option<&Target> {
        self.targets.iter().chain(&self.holdout).find(|t| t.id == id)
    }

    pub fn pose_ids(&self) -> Vec<String> {
        let mut ids = vec![self.source_id.clone()];
        for t in self.targets.iter().chain(&self.holdout) {
            if !ids.contains(&t.id) {
                ids.push(t.id.clone());
            }
        }
        ids
    }

    /// Pose by id, including the reference pose.
    pub fn pose(&self, id: &str) -> Result<ListenerPose> {
        if id == self.source_id {
            return Ok(self.reference_pose);
        }
        self.find(id).map(|t| t.pose).ok_or_else(|| Error::UnknownPose {
            id: id.to_string(),
            available: self.pose_ids().join(", "),
        })
    }
}

/// Non-overlapping `clip_len` chunks; a trailing partial chunk is dropped.
pub fn segment(x: &Waveform, clip_len: usize) -> Result<Vec<Waveform>> {
    if clip_len == 0 {
        return Err(Error::InvalidConfig("clip length must be > 0".into()));
    }
    (0..x.len() / clip_len)
        .map(|k| x.slice(k * clip_len, clip_len))
        .collect()
}

/// Builds a scene from raw full-length recordings: validates rates and
/// lengths, highpasses every recording, and cuts the configured clip.
pub fn assemble_scene(recordings: Vec<(PoseRecord, Waveform)>, cfg: &RunConfig) -> Result<Scene> {
    cfg.validate()?;
    if recordings.is_empty() {
        return Err(Error::EmptyScene);
    }
    let available = || {
        recordings
            .iter()
            .map(|(r, _)| r.id.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    };
    let unknown = |id: &str| Error::UnknownPose {
        id: id.to_string(),
        available: available(),
    };
    if !recordings.iter().any(|(r, _)| r.id == cfg.scene.source_id) {
        return Err(unknown(&cfg.scene.source_id));
    }
    for h in &cfg.scene.holdout {
        if !recordings.iter().any(|(r, _)| &r.id == h) {
            return Err(unknown(h));
        }
    }
    let sr = cfg.stft.sample_rate;
    let len = recordings[0].1.len();
    for (r, w) in &recordings {
        if w.sample_rate() != sr {
            return Err(Error::SampleRateMismatch {
                expected: sr,
                actual: w.sample_rate(),
            });
        }
        if w.n_channels() != 2 {
            return Err(Error::InvalidConfig(format!(
                "pose `{}`: expected a binaural recording, got {} channel(s)",
                r.id,
                w.n_channels()
            )));
        }
        if w.len() != len {
            return Err(Error::LengthMismatch {
                left: len,
                right: w.len(),
            });
        }
    }
    let clip_len = cfg.clip_samples();
    let n_clips = len / clip_len;
    if cfg.scene.clip_index >= n_clips {
        return Err(Error::InvalidConfig(format!(
            "clip index {} out of range ({n_clips} clip(s) of {clip_len} samples)",
            cfg.scene.clip_index
        )));
    }
    let start = cfg.scene.clip_index * clip_len;

    let mut source = None;
    let mut targets = Vec::new();
    let mut holdout = Vec::new();
    for (record, wave) in recordings {
        let clip = highpass_150(&wave)?.slice(start, clip_len)?;
        let is_source = record.id == cfg.scene.source_id;
        let is_holdout = cfg.scene.holdout.contains(&record.id);
        if is_source {
            source = Some((record.pose, clip.clone()));
        }
        let target = Target {
            id: record.id,
            pose: record.pose,
            audio: clip,
        };
        if is_holdout {
            holdout.push(target);
        } else if !is_source || cfg.scene.source_is_target {
            targets.push(target);
        }
    }
    let (reference_pose, source_clip) = source.expect("source id checked above");
    Ok(Scene {
        source_id: cfg.scene.source_id.clone(),
        source_clip,
        reference_pose,
        targets,
        holdout,
        sample_rate: sr,
        clip_seconds: cfg.scene.clip_seconds,
        stft: cfg.stft,
    })
}

pub fn wav_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.wav"))
}

/// Raw recordings listed in a scene directory, in poses-file order.
pub fn load_recordings(dir: &Path) -> Result<Vec<(PoseRecord, Waveform)>> {
    let records = load_poses(&dir.join(POSES_FILE))?;
    records
        .into_iter()
        .map(|r| {
            let path = wav_path(dir, &r.id);
            if !path.exists() {
                return Err(Error::MissingAudio(r.id.clone()));
            }
            let w = load_wav(&path)?;
            Ok((r, w))
        })
        .collect()
}

pub fn load_scene(dir: &Path, cfg: &RunConfig) -> Result<Scene> {
    assemble_scene(load_recordings(dir)?, cfg)
}

/// Writes raw recordings and the poses file in scene-directory layout.
pub fn save_recordings(dir: &Path, recordings: &[(PoseRecord, Waveform)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let records: Vec<PoseRecord> = recordings.iter().map(|(r, _)| r.clone()).collect();
    save_poses(&records, &dir.join(POSES_FILE))?;
    for (r, w) in recordings {
        save_wav(w, &wav_path(dir, &r.id))?;
    }
    Ok(())
}
