//! Time-frequency transforms and the waveform preprocessing used by the
//! training and evaluation pipeline.
//!
//! Spectrograms are stored f-major (`index = f * n_frames + t`), the same
//! order the checkpoint format uses for Gaussians.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to the overlap-added squared window before normalization.
pub const WINDOW_SUM_FLOOR: f64 = 1e-8;

/// Planar multi-channel audio (1 or 2 channels).
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    sample_rate: u32,
    channels: Vec<Vec<f64>>,
}

impl Waveform {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f64>>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if channels.is_empty() || channels.len() > 2 {
            return Err(Error::ChannelCount {
                expected: 2,
                actual: channels.len(),
            });
        }
        if channels.len() == 2 && channels[0].len() != channels[1].len() {
            return Err(Error::LengthMismatch {
                left: channels[0].len(),
                right: channels[1].len(),
            });
        }
        if channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("waveform"));
        }
        Ok(Self {
            sample_rate,
            channels,
        })
    }

    pub fn mono(sample_rate: u32, samples: Vec<f64>) -> Result<Self> {
        Self::new(sample_rate, vec![samples])
    }

    pub fn stereo(sample_rate: u32, left: Vec<f64>, right: Vec<f64>) -> Result<Self> {
        Self::new(sample_rate, vec![left, right])
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, idx: usize) -> &[f64] {
        &self.channels[idx]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// Samples `[start, start + len)` of every channel.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() {
            return Err(Error::LengthMismatch {
                left: start + len,
                right: self.len(),
            });
        }
        let channels = self
            .channels
            .iter()
            .map(|c| c[start..start + len].to_vec())
            .collect();
        Ok(Self {
            sample_rate: self.sample_rate,
            channels,
        })
    }

    pub(crate) fn require_channels(&self, n: usize) -> Result<()> {
        if self.n_channels() != n {
            return Err(Error::ChannelCount {
                expected: n,
                actual: self.n_channels(),
            });
        }
        Ok(())
    }
}

/// STFT parameters shared by training, rendering and metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub n_fft: usize,
    pub win_length: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            n_fft: 512,
            win_length: 400,
            hop: 160,
            sample_rate: 16_000,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 2 || !self.n_fft.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "n_fft must be even and >= 2, got {}",
                self.n_fft
            )));
        }
        if self.win_length == 0 || self.win_length > self.n_fft {
            return Err(Error::InvalidConfig(format!(
                "win_length {} must be in 1..=n_fft ({})",
                self.win_length, self.n_fft
            )));
        }
        if self.hop == 0 || self.hop > self.win_length {
            return Err(Error::InvalidConfig(format!(
                "hop {} must be in 1..=win_length ({})",
                self.hop, self.win_length
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Centre frequency of bin `f` in Hz.
    pub fn bin_hz(&self, f: usize) -> f64 {
        f as f64 * self.sample_rate as f64 / self.n_fft as f64
    }

    /// Angular frequency of bin `f` in rad/s.
    pub fn omega(&self, f: usize) -> f64 {
        2.0 * PI * self.bin_hz(f)
    }

    pub fn frames_for(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.hop)
    }

    /// Periodic Hamming window of `win_length`, zero-padded (centred) to `n_fft`.
    pub fn padded_window(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n_fft];
        let offset = (self.n_fft - self.win_length) / 2;
        let n = self.win_length as f64;
        for i in 0..self.win_length {
            w[offset + i] = 0.54 - 0.46 * (2.0 * PI * i as f64 / n).cos();
        }
        w
    }
}

/// STFT configuration plus the frame count of a particular signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpectralGrid {
    pub stft: StftConfig,
    pub n_frames: usize,
}

impl SpectralGrid {
    pub fn n_bins(&self) -> usize {
        self.stft.n_bins()
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_cells(&self) -> usize {
        self.n_bins() * self.n_frames
    }

    pub fn omega(&self, f: usize) -> f64 {
        self.stft.omega(f)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_bins(), self.n_frames)
    }
}

/// Complex STFT of a 1- or 2-channel signal.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    grid: SpectralGrid,
    n_samples: usize,
    channels: Vec<Vec<Complex64>>,
}

impl ComplexSpectrogram {
    pub fn new(grid: SpectralGrid, n_samples: usize, channels: Vec<Vec<Complex64>>) -> Result<Self> {
        if channels.is_empty() || channels.len() > 2 {
            return Err(Error::ChannelCount {
                expected: 2,
                actual: channels.len(),
            });
        }
        for ch in &channels {
            if ch.len() != grid.n_cells() {
                return Err(Error::DimensionMismatch {
                    expected: grid.dims(),
                    actual: (ch.len(), 1),
                });
            }
        }
        if channels
            .iter()
            .flatten()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::NonFinite("spectrogram"));
        }
        Ok(Self {
            grid,
            n_samples,
            channels,
        })
    }

    pub fn zeros(grid: SpectralGrid, n_samples: usize, n_channels: usize) -> Self {
        Self {
            grid,
            n_samples,
            channels: vec![vec![Complex64::new(0.0, 0.0); grid.n_cells()]; n_channels],
        }
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_bins(&self) -> usize {
        self.grid.n_bins()
    }

    pub fn n_frames(&self) -> usize {
        self.grid.n_frames
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }

    pub fn channel(&self, idx: usize) -> &[Complex64] {
        &self.channels[idx]
    }

    pub fn channel_mut(&mut self, idx: usize) -> &mut [Complex64] {
        &mut self.channels[idx]
    }

    pub fn get(&self, ch: usize, f: usize, t: usize) -> Complex64 {
        self.channels[ch][f * self.grid.n_frames + t]
    }

    pub(crate) fn require_channels(&self, n: usize) -> Result<()> {
        if self.n_channels() != n {
            return Err(Error::ChannelCount {
                expected: n,
                actual: self.n_channels(),
            });
        }
        Ok(())
    }

    pub(crate) fn require_same_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }
}

/// Real F x T grid, f-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeGrid {
    pub n_bins: usize,
    pub n_frames: usize,
    pub data: Vec<f64>,
}

impl MagnitudeGrid {
    pub fn get(&self, f: usize, t: usize) -> f64 {
        self.data[f * self.n_frames + t]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_bins, self.n_frames)
    }
}

fn reflect_index(idx: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut i = idx.rem_euclid(period);
    if i >= len as isize {
        i = period - i;
    }
    i as usize
}

/// Centred STFT with reflection padding and a periodic Hamming window.
///
/// Frame `t` is centred on sample `t * hop`; the frame count is
/// `ceil(len / hop)`.
pub fn stft(x: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    if x.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    if x.sample_rate() != cfg.sample_rate {
        return Err(Error::SampleRateMismatch {
            expected: cfg.sample_rate,
            actual: x.sample_rate(),
        });
    }
    let n = x.len();
    let n_fft = cfg.n_fft;
    let n_bins = cfg.n_bins();
    let n_frames = cfg.frames_for(n);
    let grid = SpectralGrid {
        stft: *cfg,
        n_frames,
    };
    let window = cfg.padded_window();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let half = (n_fft / 2) as isize;

    let channels = x
        .channels()
        .iter()
        .map(|samples| {
            let mut out = vec![Complex64::new(0.0, 0.0); n_bins * n_frames];
            for t in 0..n_frames {
                let start = (t * cfg.hop) as isize - half;
                for (i, slot) in buf.iter_mut().enumerate() {
                    let s = samples[reflect_index(start + i as isize, n)];
                    *slot = Complex64::new(s * window[i], 0.0);
                }
                fft.process(&mut buf);
                for f in 0..n_bins {
                    out[f * n_frames + t] = buf[f];
                }
            }
            out
        })
        .collect();

    Ok(ComplexSpectrogram {
        grid,
        n_samples: n,
        channels,
    })
}

/// Overlap-add inverse of [`stft`], normalized by the summed squared window.
pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform> {
    let cfg = s.grid.stft;
    cfg.validate()?;
    if s
        .channels
        .iter()
        .flatten()
        .any(|z| !z.re.is_finite() || !z.im.is_finite())
    {
        return Err(Error::NonFinite("spectrogram"));
    }
    let n = s.n_samples;
    let n_fft = cfg.n_fft;
    let n_bins = cfg.n_bins();
    let n_frames = s.n_frames();
    let window = cfg.padded_window();
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n_fft);
    let half = (n_fft / 2) as isize;

    let mut wsum = vec![0.0; n];
    for t in 0..n_frames {
        let start = (t * cfg.hop) as isize - half;
        for (i, w) in window.iter().enumerate() {
            let pos = start + i as isize;
            if pos >= 0 && (pos as usize) < n {
                wsum[pos as usize] += w * w;
            }
        }
    }
    if let Some(pos) = wsum.iter().position(|&w| w < WINDOW_SUM_FLOOR) {
        return Err(Error::DegenerateGrid(pos));
    }

    let scale = 1.0 / n_fft as f64;
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let channels = s
        .channels
        .iter()
        .map(|spec| {
            let mut out = vec![0.0; n];
            for t in 0..n_frames {
                for f in 0..n_bins {
                    buf[f] = spec[f * n_frames + t];
                }
                for f in 1..n_fft / 2 {
                    buf[n_fft - f] = buf[f].conj();
                }
                ifft.process(&mut buf);
                let start = (t * cfg.hop) as isize - half;
                for (i, w) in window.iter().enumerate() {
                    let pos = start + i as isize;
                    if pos >= 0 && (pos as usize) < n {
                        out[pos as usize] += buf[i].re * scale * w;
                    }
                }
            }
            for (o, w) in out.iter_mut().zip(&wsum) {
                *o /= w;
            }
            out
        })
        .collect();
    Waveform::new(cfg.sample_rate, channels)
}

/// `A(f,t) = (|S_L| + |S_R|) / 2`.
pub fn content_magnitude(s: &ComplexSpectrogram) -> Result<MagnitudeGrid> {
    s.require_channels(2)?;
    let data = s
        .channel(0)
        .iter()
        .zip(s.channel(1))
        .map(|(l, r)| 0.5 * (l.norm() + r.norm()))
        .collect();
    Ok(MagnitudeGrid {
        n_bins: s.n_bins(),
        n_frames: s.n_frames(),
        data,
    })
}

/// Magnitude of the analytic signal of a mono waveform.
pub fn hilbert_envelope(x: &Waveform) -> Result<Vec<f64>> {
    x.require_channels(1)?;
    analytic_envelope(x.channel(0))
}

/// Full-length FFT Hilbert transform: negative frequencies zeroed, positive
/// doubled, DC and Nyquist kept.
pub fn analytic_envelope(samples: &[f64]) -> Result<Vec<f64>> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::EmptyWaveform);
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = samples.iter().map(|&s| Complex64::new(s, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let positive_end = n.div_ceil(2);
    for z in buf.iter_mut().take(positive_end).skip(1) {
        *z *= 2.0;
    }
    for z in buf.iter_mut().skip(n / 2 + 1) {
        *z = Complex64::new(0.0, 0.0);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    Ok(buf.iter().map(|z| z.norm() * scale).collect())
}

/// Second-order section in transposed direct form II.
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    /// Butterworth (Q = 1/sqrt 2) highpass via the bilinear transform.
    pub fn butterworth_highpass(cutoff_hz: f64, sample_rate: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / sample_rate;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * std::f64::consts::FRAC_1_SQRT_2);
        let a0 = 1.0 + alpha;
        Self {
            b0: (1.0 + cos) / 2.0 / a0,
            b1: -(1.0 + cos) / a0,
            b2: (1.0 + cos) / 2.0 / a0,
            a1: -2.0 * cos / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    pub fn process(&self, input: &[f64]) -> Vec<f64> {
        let (mut z1, mut z2) = (0.0, 0.0);
        input
            .iter()
            .map(|&x| {
                let y = self.b0 * x + z1;
                z1 = self.b1 * x - self.a1 * y + z2;
                z2 = self.b2 * x - self.a2 * y;
                y
            })
            .collect()
    }

    /// Complex response at `freq_hz`.
    pub fn response(&self, freq_hz: f64, sample_rate: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / sample_rate;
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        (self.b0 + self.b1 * z1 + self.b2 * z2) / (1.0 + self.a1 * z1 + self.a2 * z2)
    }
}

pub const HIGHPASS_CUTOFF_HZ: f64 = 150.0;
pub const HIGHPASS_SAMPLE_RATE: u32 = 16_000;

/// Causal 150 Hz Butterworth highpass, applied per channel. Input must be 16 kHz.
pub fn highpass_150(x: &Waveform) -> Result<Waveform> {
    if x.sample_rate() != HIGHPASS_SAMPLE_RATE {
        return Err(Error::SampleRateMismatch {
            expected: HIGHPASS_SAMPLE_RATE,
            actual: x.sample_rate(),
        });
    }
    let filter = Biquad::butterworth_highpass(HIGHPASS_CUTOFF_HZ, HIGHPASS_SAMPLE_RATE as f64);
    let channels = x.channels().iter().map(|c| filter.process(c)).collect();
    Waveform::new(x.sample_rate(), channels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const SR: u32 = 16_000;

    fn random_signal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Direct per-frame DFT with its own padding and window construction.
    fn naive_stft(x: &[f64], cfg: &StftConfig) -> Vec<Complex64> {
        let n = x.len() as isize;
        let frames = x.len().div_ceil(cfg.hop);
        let bins = cfg.n_fft / 2 + 1;
        let pad = (cfg.n_fft - cfg.win_length) / 2;
        let mut out = vec![Complex64::new(0.0, 0.0); bins * frames];
        for t in 0..frames {
            let mut frame = vec![0.0; cfg.n_fft];
            for i in 0..cfg.win_length {
                let mut s = (t * cfg.hop + pad + i) as isize - (cfg.n_fft / 2) as isize;
                if s < 0 {
                    s = -s;
                }
                if s >= n {
                    s = 2 * (n - 1) - s;
                }
                let w = 0.54
                    - 0.46 * (2.0 * PI * i as f64 / cfg.win_length as f64).cos();
                frame[pad + i] = x[s as usize] * w;
            }
            for f in 0..bins {
                let mut acc = Complex64::new(0.0, 0.0);
                for (i, v) in frame.iter().enumerate() {
                    let ang = -2.0 * PI * (f * i) as f64 / cfg.n_fft as f64;
                    acc += Complex64::from_polar(*v, ang);
                }
                out[f * frames + t] = acc;
            }
        }
        out
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let cfg = StftConfig::default();
        let x: Vec<f64> = (0..SR as usize)
            .map(|n| (2.0 * PI * 1000.0 * n as f64 / SR as f64).sin())
            .collect();
        let s = stft(&Waveform::mono(SR, x).unwrap(), &cfg).unwrap();
        let t = s.n_frames() / 2;
        let mags: Vec<f64> = (0..s.n_bins()).map(|f| s.get(0, f, t).norm()).collect();
        let peak = mags
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(peak, 32);
        for (f, m) in mags.iter().enumerate() {
            if f.abs_diff(32) > 2 {
                assert!(20.0 * (mags[32] / m).log10() >= 20.0, "bin {f}");
            }
        }
    }

    #[test]
    fn zero_input_gives_zero_spectrogram() {
        let s = stft(&Waveform::mono(SR, vec![0.0; 1000]).unwrap(), &StftConfig::default()).unwrap();
        assert!(s.channel(0).iter().all(|z| z.norm() == 0.0));
        let y = istft(&s).unwrap();
        assert!(y.channel(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_naive_dft_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 3 * SR as usize;
        let l = random_signal(&mut rng, n);
        let r = random_signal(&mut rng, n);
        let cfg = StftConfig::default();
        let s = stft(&Waveform::stereo(SR, l.clone(), r.clone()).unwrap(), &cfg).unwrap();
        for (ch, x) in [l, r].iter().enumerate() {
            let oracle = naive_stft(x, &cfg);
            let scale = oracle.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let err = oracle
                .iter()
                .zip(s.channel(ch))
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(err / scale < 1e-6, "relative error {}", err / scale);
        }
    }

    #[test]
    fn frame_count_is_ceil_len_over_hop() {
        let cfg = StftConfig::default();
        for (len, frames) in [(48_000, 300), (48_001, 301), (1, 1), (160, 1), (161, 2)] {
            let s = stft(&Waveform::mono(SR, vec![0.5; len]).unwrap(), &cfg).unwrap();
            assert_eq!(s.n_frames(), frames);
            assert_eq!(s.n_bins(), 257);
        }
    }

    #[test]
    fn sine_round_trip_preserves_rms() {
        let x: Vec<f64> = (0..8000)
            .map(|n| 0.7 * (2.0 * PI * 437.0 * n as f64 / SR as f64).sin())
            .collect();
        let cfg = StftConfig::default();
        let y = istft(&stft(&Waveform::mono(SR, x.clone()).unwrap(), &cfg).unwrap()).unwrap();
        let rms = |v: &[f64]| (v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64).sqrt();
        let rel = (rms(y.channel(0)) - rms(&x)).abs() / rms(&x);
        assert!(rel < 1e-3);
    }

    #[test]
    fn stft_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = StftConfig::default();
        let x = random_signal(&mut rng, 4000);
        let y = random_signal(&mut rng, 4000);
        let (a, b) = (0.3, -1.7);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let sx = stft(&Waveform::mono(SR, x).unwrap(), &cfg).unwrap();
        let sy = stft(&Waveform::mono(SR, y).unwrap(), &cfg).unwrap();
        let sm = stft(&Waveform::mono(SR, mix).unwrap(), &cfg).unwrap();
        let scale = sm.channel(0).iter().map(|z| z.norm()).fold(0.0, f64::max);
        for i in 0..sm.channel(0).len() {
            let expect = a * sx.channel(0)[i] + b * sy.channel(0)[i];
            assert!((sm.channel(0)[i] - expect).norm() <= 1e-9 * scale);
        }
    }

    #[test]
    fn parseval_on_interior_frames() {
        // Each interior frame satisfies sum|X|^2 / n_fft == sum (w x)^2; summed
        // over frames and divided by the mean squared-window coverage this
        // recovers the signal energy.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = StftConfig::default();
        let x = random_signal(&mut rng, 16_000);
        let s = stft(&Waveform::mono(SR, x.clone()).unwrap(), &cfg).unwrap();
        let w = cfg.padded_window();
        let w2: f64 = w.iter().map(|v| v * v).sum::<f64>() / cfg.hop as f64;
        let (t0, t1) = (10, s.n_frames() - 10);
        let mut spec_energy = 0.0;
        for t in t0..t1 {
            for f in 0..s.n_bins() {
                let m = s.get(0, f, t).norm_sqr();
                let weight = if f == 0 || f == cfg.n_fft / 2 { 1.0 } else { 2.0 };
                spec_energy += weight * m;
            }
        }
        spec_energy /= cfg.n_fft as f64 * w2;
        let lo = t0 * cfg.hop;
        let hi = t1 * cfg.hop;
        let wave_energy: f64 = x[lo..hi].iter().map(|v| v * v).sum();
        assert!((spec_energy - wave_energy).abs() / wave_energy < 0.01);
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = StftConfig::default();
        assert!(matches!(
            stft(&Waveform::mono(SR, vec![]).unwrap(), &cfg),
            Err(Error::EmptyWaveform)
        ));
        assert!(matches!(
            stft(&Waveform::mono(8000, vec![0.0; 10]).unwrap(), &cfg),
            Err(Error::SampleRateMismatch { .. })
        ));
        let degenerate = StftConfig {
            hop: 500,
            ..cfg
        };
        assert!(degenerate.validate().is_err());
    }

    #[test]
    fn istft_rejects_non_finite() {
        let grid = SpectralGrid {
            stft: StftConfig::default(),
            n_frames: 2,
        };
        let mut s = ComplexSpectrogram::zeros(grid, 320, 1);
        s.channel_mut(0)[3] = Complex64::new(f64::NAN, 0.0);
        assert!(matches!(istft(&s), Err(Error::NonFinite(_))));
    }

    #[test]
    fn content_magnitude_formula() {
        let grid = SpectralGrid {
            stft: StftConfig::default(),
            n_frames: 1,
        };
        let mut s = ComplexSpectrogram::zeros(grid, 160, 2);
        s.channel_mut(0)[4] = Complex64::new(0.0, 2.0);
        s.channel_mut(0)[5] = Complex64::new(3.0, 4.0);
        s.channel_mut(1)[5] = Complex64::new(-3.0, 4.0);
        let a = content_magnitude(&s).unwrap();
        assert_eq!(a.data[4], 1.0);
        assert_eq!(a.data[5], 5.0);
        let mono = ComplexSpectrogram::zeros(grid, 160, 1);
        assert!(content_magnitude(&mono).is_err());
    }

    #[test]
    fn envelope_of_cosine_is_flat() {
        let x: Vec<f64> = (0..16_000)
            .map(|n| (2.0 * PI * 440.0 * n as f64 / SR as f64).cos())
            .collect();
        let env = hilbert_envelope(&Waveform::mono(SR, x).unwrap()).unwrap();
        let dev = env[1000..15_000]
            .iter()
            .map(|e| (e - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(dev < 1e-3, "{dev}");
    }

    #[test]
    fn envelope_demodulates_am() {
        let a = |n: usize| 1.0 + 0.5 * (2.0 * PI * 3.0 * n as f64 / SR as f64).sin();
        let x: Vec<f64> = (0..16_000)
            .map(|n| a(n) * (2.0 * PI * 1000.0 * n as f64 / SR as f64).cos())
            .collect();
        let env = analytic_envelope(&x).unwrap();
        for n in 2000..14_000 {
            assert!((env[n] - a(n)).abs() / a(n) < 0.01);
        }
    }

    #[test]
    fn envelope_zero_and_sign() {
        assert!(analytic_envelope(&[0.0; 64]).unwrap().iter().all(|&v| v == 0.0));
        assert!(analytic_envelope(&[]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_signal(&mut rng, 777);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let e1 = analytic_envelope(&x).unwrap();
        let e2 = analytic_envelope(&neg).unwrap();
        assert!(e1.iter().all(|&v| v >= 0.0));
        assert_eq!(e1, e2);
    }

    #[test]
    fn highpass_rejects_dc_and_passes_1k() {
        let dc = Waveform::mono(SR, vec![1.0; SR as usize]).unwrap();
        let y = highpass_150(&dc).unwrap();
        assert!(y.channel(0)[8000..].iter().all(|v| v.abs() < 1e-3));

        let filter = Biquad::butterworth_highpass(150.0, SR as f64);
        assert!(filter.response(0.0, SR as f64).norm() < 1e-3);
        let gain_db = 20.0 * filter.response(1000.0, SR as f64).norm().log10();
        assert!(gain_db.abs() < 0.5);

        let x: Vec<f64> = (0..SR as usize)
            .map(|n| (2.0 * PI * 1000.0 * n as f64 / SR as f64).sin())
            .collect();
        let y = highpass_150(&Waveform::mono(SR, x.clone()).unwrap()).unwrap();
        let rms = |v: &[f64]| (v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64).sqrt();
        let measured = 20.0 * (rms(&y.channel(0)[4000..]) / rms(&x[4000..])).log10();
        assert!(measured.abs() < 0.5, "{measured}");
    }

    #[test]
    fn highpass_zero_and_rate_check() {
        let z = highpass_150(&Waveform::mono(SR, vec![0.0; 100]).unwrap()).unwrap();
        assert!(z.channel(0).iter().all(|&v| v == 0.0));
        assert!(highpass_150(&Waveform::mono(44_100, vec![0.0; 100]).unwrap()).is_err());
    }

    #[test]
    fn waveform_validation() {
        assert!(Waveform::stereo(SR, vec![0.0; 3], vec![0.0; 4]).is_err());
        assert!(Waveform::mono(SR, vec![f64::INFINITY]).is_err());
        assert!(Waveform::new(0, vec![vec![0.0]]).is_err());
        assert!(Waveform::new(SR, vec![vec![0.0]; 3]).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(100))]
        #[test]
        fn round_trip_interior(seed in 0u64..u64::MAX, len in 800usize..4000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_signal(&mut rng, len);
            let cfg = StftConfig::default();
            let y = istft(&stft(&Waveform::mono(SR, x.clone()).unwrap(), &cfg).unwrap()).unwrap();
            proptest::prop_assert_eq!(y.len(), len);
            let err = x[cfg.win_length..len - cfg.win_length]
                .iter()
                .zip(&y.channel(0)[cfg.win_length..len - cfg.win_length])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            proptest::prop_assert!(err < 1e-6);
        }
    }
}
