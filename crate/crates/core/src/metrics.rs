//! MAG, ENV and LRE between a predicted and a reference binaural waveform.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::spectral::{analytic_envelope, stft, StftConfig, Waveform};

fn check_pair(pred: &Waveform, gt: &Waveform) -> Result<()> {
    gt.require_channels(2)?;
    pred.require_channels(2)?;
    if pred.sample_rate() != gt.sample_rate() {
        return Err(Error::SampleRateMismatch {
            expected: gt.sample_rate(),
            actual: pred.sample_rate(),
        });
    }
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    if gt.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    Ok(())
}

/// Mean absolute difference of STFT magnitudes over both channels and all
/// bins.
pub fn mag_distance(pred: &Waveform, gt: &Waveform, cfg: &StftConfig) -> Result<f64> {
    check_pair(pred, gt)?;
    let (sp, sg) = (stft(pred, cfg)?, stft(gt, cfg)?);
    let mut sum = 0.0;
    let mut n = 0usize;
    for ch in 0..2 {
        for (a, b) in sp.channel(ch).iter().zip(sg.channel(ch)) {
            sum += (a.norm() - b.norm()).abs();
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

/// Root-mean-square difference of the Hilbert envelopes, averaged over the
/// two channels.
pub fn env_distance(pred: &Waveform, gt: &Waveform) -> Result<f64> {
    check_pair(pred, gt)?;
    let mut total = 0.0;
    for ch in 0..2 {
        let ep = analytic_envelope(pred.channel(ch))?;
        let eg = analytic_envelope(gt.channel(ch))?;
        let ms = ep.iter().zip(&eg).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / ep.len() as f64;
        total += ms.sqrt();
    }
    Ok(total / 2.0)
}

/// Left-to-right energy ratio in dB over the whole clip.
pub fn energy_ratio_db(x: &Waveform) -> Result<f64> {
    x.require_channels(2)?;
    let energy = |c: &[f64]| c.iter().map(|v| v * v).sum::<f64>();
    let (el, er) = (energy(x.channel(0)), energy(x.channel(1)));
    if !(el > 0.0 && er > 0.0) {
        return Err(Error::UndefinedLre);
    }
    Ok(10.0 * (el / er).log10())
}

pub fn lre_error(pred: &Waveform, gt: &Waveform) -> Result<f64> {
    check_pair(pred, gt)?;
    Ok((energy_ratio_db(pred)? - energy_ratio_db(gt)?).abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub mag: f64,
    pub env: f64,
    pub lre_db: f64,
}

pub fn evaluate(pred: &Waveform, gt: &Waveform, cfg: &StftConfig) -> Result<MetricReport> {
    Ok(MetricReport {
        mag: mag_distance(pred, gt, cfg)?,
        env: env_distance(pred, gt)?,
        lre_db: lre_error(pred, gt)?,
    })
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mag = {:?}", self.mag)?;
        writeln!(f, "env = {:?}", self.env)?;
        writeln!(f, "lre_db = {:?}", self.lre_db)
    }
}

impl MetricReport {
    pub fn parse(text: &str) -> Result<Self> {
        let mut vals = [None; 3];
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad report line `{line}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value in `{line}`")))?;
            match k.trim() {
                "mag" => vals[0] = Some(v),
                "env" => vals[1] = Some(v),
                "lre_db" => vals[2] = Some(v),
                other => return Err(Error::Config(format!("unknown metric `{other}`"))),
            }
        }
        match vals {
            [Some(mag), Some(env), Some(lre_db)] => Ok(Self { mag, env, lre_db }),
            _ => Err(Error::Config("report is missing a metric".into())),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }
}
