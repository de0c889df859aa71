//! Training objective: log-magnitude distance on the mono/difference
//! decomposition plus a wrap-free phase distance per ear.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::ComplexSpectrogram;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_diff: f64,
    pub lambda_phs: f64,
    pub log_floor: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_diff: 0.1,
            lambda_phs: 0.1,
            log_floor: 1e-5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_diff >= 0.0 && self.lambda_diff.is_finite())
            || !(self.lambda_phs >= 0.0 && self.lambda_phs.is_finite())
        {
            return Err(Error::InvalidConfig("loss weights must be finite and >= 0".into()));
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return Err(Error::InvalidConfig("log_floor must be > 0".into()));
        }
        Ok(())
    }
}

/// The four weighted terms and their combination.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub total: f64,
    pub mono_mag: f64,
    pub diff_mag: f64,
    pub phase_l: f64,
    pub phase_r: f64,
}

impl LossComponents {
    pub fn recombine(&self, w: &LossWeights) -> f64 {
        self.mono_mag + w.lambda_diff * self.diff_mag + w.lambda_phs * (self.phase_l + self.phase_r)
    }
}

/// Argument with the zero value mapped to phase 0.
#[inline]
pub fn phase(z: Complex64) -> f64 {
    if z.re == 0.0 && z.im == 0.0 {
        0.0
    } else {
        z.im.atan2(z.re)
    }
}

/// Per-bin log-magnitude term.
#[inline]
pub fn mag_term(a: f64, b: f64, floor: f64) -> f64 {
    let d = (a + floor).ln() - (b + floor).ln();
    d * d
}

/// Per-bin unit-circle phase distance, `2 - 2 cos(a - b)`.
#[inline]
pub fn phase_term(a: f64, b: f64) -> f64 {
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    (sa - sb).powi(2) + (ca - cb).powi(2)
}

/// `(S_L + S_R, S_L - S_R)`.
pub fn mono_diff(s: &ComplexSpectrogram) -> Result<(ComplexSpectrogram, ComplexSpectrogram)> {
    s.require_channels(2)?;
    let (l, r) = (s.channel(0), s.channel(1));
    let mono = l.iter().zip(r).map(|(a, b)| a + b).collect();
    let diff = l.iter().zip(r).map(|(a, b)| a - b).collect();
    Ok((
        ComplexSpectrogram::new(*s.grid(), s.n_samples(), vec![mono])?,
        ComplexSpectrogram::new(*s.grid(), s.n_samples(), vec![diff])?,
    ))
}

fn single_channels<'a>(
    s: &'a ComplexSpectrogram,
    s_hat: &'a ComplexSpectrogram,
) -> Result<(&'a [Complex64], &'a [Complex64])> {
    s.require_same_dims(s_hat)?;
    s.require_channels(1)?;
    s_hat.require_channels(1)?;
    Ok((s.channel(0), s_hat.channel(0)))
}

/// Mean squared difference of `log(|.| + floor)` over all bins.
pub fn mag_loss(s: &ComplexSpectrogram, s_hat: &ComplexSpectrogram, floor: f64) -> Result<f64> {
    let (a, b) = single_channels(s, s_hat)?;
    Ok(mag_loss_slices(a, b, floor))
}

/// Mean unit-circle phase distance over all bins.
pub fn phase_loss(s: &ComplexSpectrogram, s_hat: &ComplexSpectrogram) -> Result<f64> {
    let (a, b) = single_channels(s, s_hat)?;
    Ok(phase_loss_slices(a, b))
}

fn mag_loss_slices(a: &[Complex64], b: &[Complex64], floor: f64) -> f64 {
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| mag_term(x.norm(), y.norm(), floor))
        .sum();
    sum / a.len() as f64
}

fn phase_loss_slices(a: &[Complex64], b: &[Complex64]) -> f64 {
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| phase_term(phase(*x), phase(*y)))
        .sum();
    sum / a.len() as f64
}

/// Full objective on two binaural spectrograms.
pub fn total_loss(
    s_gt: &ComplexSpectrogram,
    s_hat: &ComplexSpectrogram,
    w: &LossWeights,
) -> Result<LossComponents> {
    w.validate()?;
    s_gt.require_channels(2)?;
    s_hat.require_channels(2)?;
    s_gt.require_same_dims(s_hat)?;
    let (gt_mono, gt_diff) = mono_diff(s_gt)?;
    let (hat_mono, hat_diff) = mono_diff(s_hat)?;
    let mut c = LossComponents {
        total: 0.0,
        mono_mag: mag_loss(&gt_mono, &hat_mono, w.log_floor)?,
        diff_mag: mag_loss(&gt_diff, &hat_diff, w.log_floor)?,
        phase_l: phase_loss_slices(s_gt.channel(0), s_hat.channel(0)),
        phase_r: phase_loss_slices(s_gt.channel(1), s_hat.channel(1)),
    };
    c.total = c.recombine(w);
    Ok(c)
}
