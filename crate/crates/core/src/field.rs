//! The Audio Gaussian set: one learnable primitive per STFT bin, its
//! initialization, checkpoint format and point-cloud export.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ListenerPose, Quaternion, Vec3};
use crate::sh;
use crate::spectral::{MagnitudeGrid, SpectralGrid};

/// `alpha = softplus(alpha_raw + ALPHA_OFFSET)`, so a raw value of zero is a
/// decay exponent of exactly one.
pub const ALPHA_OFFSET: f64 = 0.541_324_854_612_918_1;

/// Lower bound on the effective decay exponent (softplus underflow).
pub const ALPHA_MIN: f64 = 1e-12;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Effective decay exponent for a stored raw value.
#[inline]
pub fn effective_alpha(alpha_raw: f64) -> f64 {
    softplus(alpha_raw + ALPHA_OFFSET).max(ALPHA_MIN)
}

/// d alpha / d alpha_raw.
#[inline]
pub fn effective_alpha_grad(alpha_raw: f64) -> f64 {
    let alpha = softplus(alpha_raw + ALPHA_OFFSET);
    if alpha < ALPHA_MIN {
        0.0
    } else {
        sigmoid(alpha_raw + ALPHA_OFFSET)
    }
}

/// Geometry and propagation constants of the field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub sh_degree: u32,
    /// Radius (m) of the ball positions are sampled from at init.
    pub init_radius: f64,
    /// Distance stabilizer (m) in the attenuation ratio.
    pub epsilon: f64,
    /// Range of the multiplicative phase residual, `eta in [1 - l, 1 + l]`.
    pub lambda_residual: f64,
    pub head_radius: f64,
    pub speed_of_sound: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            sh_degree: 2,
            init_radius: 0.1,
            epsilon: 1e-4,
            lambda_residual: 0.2,
            head_radius: 0.0875,
            speed_of_sound: 343.0,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        sh::check_degree(self.sh_degree)?;
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        if !(0.0..1.0).contains(&self.lambda_residual) {
            return bad("lambda_residual must be in [0, 1)");
        }
        if !(self.head_radius > 0.0) {
            return bad("head_radius must be > 0");
        }
        if !(self.speed_of_sound > 0.0) {
            return bad("speed_of_sound must be > 0");
        }
        if !(self.init_radius >= 0.0) {
            return bad("init_radius must be >= 0");
        }
        Ok(())
    }
}

/// Struct-of-arrays parameter storage, indexed by `f * n_frames + t`.
///
/// The field stores `Params<f32>`; training and gradients use `Params<f64>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub position: Vec<[T; 3]>,
    pub c_mono: Vec<T>,
    pub c_diff: Vec<T>,
    pub alpha_raw: Vec<T>,
    pub delta: Vec<T>,
    n_coeffs: usize,
}

impl<T: Copy + Default> Params<T> {
    pub fn zeros(n: usize, n_coeffs: usize) -> Self {
        Self {
            position: vec![[T::default(); 3]; n],
            c_mono: vec![T::default(); n * n_coeffs],
            c_diff: vec![T::default(); n * n_coeffs],
            alpha_raw: vec![T::default(); n],
            delta: vec![T::default(); n],
            n_coeffs,
        }
    }

    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_coeffs
    }

    pub fn c_mono_of(&self, i: usize) -> &[T] {
        &self.c_mono[i * self.n_coeffs..(i + 1) * self.n_coeffs]
    }

    pub fn c_diff_of(&self, i: usize) -> &[T] {
        &self.c_diff[i * self.n_coeffs..(i + 1) * self.n_coeffs]
    }

    pub fn c_mono_of_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.c_mono[i * self.n_coeffs..(i + 1) * self.n_coeffs]
    }

    pub fn c_diff_of_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.c_diff[i * self.n_coeffs..(i + 1) * self.n_coeffs]
    }

    /// Same shape, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.len(), self.n_coeffs)
    }
}

impl Params<f64> {
    pub fn all_finite(&self) -> bool {
        self.position.iter().flatten().all(|v| v.is_finite())
            && self.c_mono.iter().all(|v| v.is_finite())
            && self.c_diff.iter().all(|v| v.is_finite())
            && self.alpha_raw.iter().all(|v| v.is_finite())
            && self.delta.iter().all(|v| v.is_finite())
    }

    pub fn to_f32(&self) -> Params<f32> {
        Params {
            position: self.position.iter().map(|p| p.map(|v| v as f32)).collect(),
            c_mono: self.c_mono.iter().map(|&v| v as f32).collect(),
            c_diff: self.c_diff.iter().map(|&v| v as f32).collect(),
            alpha_raw: self.alpha_raw.iter().map(|&v| v as f32).collect(),
            delta: self.delta.iter().map(|&v| v as f32).collect(),
            n_coeffs: self.n_coeffs,
        }
    }
}

impl Params<f32> {
    pub fn to_f64(&self) -> Params<f64> {
        Params {
            position: self.position.iter().map(|p| p.map(f64::from)).collect(),
            c_mono: self.c_mono.iter().map(|&v| v.into()).collect(),
            c_diff: self.c_diff.iter().map(|&v| v.into()).collect(),
            alpha_raw: self.alpha_raw.iter().map(|&v| v.into()).collect(),
            delta: self.delta.iter().map(|&v| v.into()).collect(),
            n_coeffs: self.n_coeffs,
        }
    }
}

/// One Gaussian's parameters, copied out of a field.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioGaussian {
    pub position: Vec3,
    pub c_mono: Vec<f64>,
    pub c_diff: Vec<f64>,
    pub alpha_raw: f64,
    pub delta: f64,
}

impl AudioGaussian {
    pub fn alpha(&self) -> f64 {
        effective_alpha(self.alpha_raw)
    }
}

/// Dimensions and reference frame shared by every Gaussian of a field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldLayout {
    pub n_bins: usize,
    pub n_frames: usize,
    pub sh_degree: u32,
    pub reference: ListenerPose,
}

impl FieldLayout {
    pub fn n_gaussians(&self) -> usize {
        self.n_bins * self.n_frames
    }

    pub fn n_coeffs(&self) -> usize {
        sh::n_coeffs(self.sh_degree)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_bins, self.n_frames)
    }
}

/// The full Gaussian set for one source clip.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianField {
    layout: FieldLayout,
    params: Params<f32>,
}

impl GaussianField {
    pub fn from_params(layout: FieldLayout, params: Params<f32>) -> Result<Self> {
        sh::check_degree(layout.sh_degree)?;
        if params.len() != layout.n_gaussians() || params.n_coeffs() != layout.n_coeffs() {
            return Err(Error::DimensionMismatch {
                expected: layout.dims(),
                actual: (params.len(), params.n_coeffs()),
            });
        }
        Ok(Self { layout, params })
    }

    pub fn layout(&self) -> &FieldLayout {
        &self.layout
    }

    pub fn params(&self) -> &Params<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<f32> {
        &mut self.params
    }

    pub fn n_bins(&self) -> usize {
        self.layout.n_bins
    }

    pub fn n_frames(&self) -> usize {
        self.layout.n_frames
    }

    pub fn sh_degree(&self) -> u32 {
        self.layout.sh_degree
    }

    pub fn reference_pose(&self) -> &ListenerPose {
        &self.layout.reference
    }

    pub fn p_ref(&self) -> Vec3 {
        self.layout.reference.position()
    }

    pub fn gaussian(&self, f: usize, t: usize) -> AudioGaussian {
        let i = f * self.layout.n_frames + t;
        let p = &self.params;
        AudioGaussian {
            position: p.position[i].map(f64::from),
            c_mono: p.c_mono_of(i).iter().map(|&v| v.into()).collect(),
            c_diff: p.c_diff_of(i).iter().map(|&v| v.into()).collect(),
            alpha_raw: p.alpha_raw[i].into(),
            delta: p.delta[i].into(),
        }
    }
}

/// Positions uniform in a ball of `cfg.init_radius` around `center`, all SH
/// coefficients zero, decay exponent one and zero phase residual.
pub fn init_field(
    grid: &SpectralGrid,
    center: Vec3,
    reference: &ListenerPose,
    cfg: &FieldConfig,
    seed: u64,
) -> Result<GaussianField> {
    cfg.validate()?;
    let layout = FieldLayout {
        n_bins: grid.n_bins(),
        n_frames: grid.n_frames(),
        sh_degree: cfg.sh_degree,
        reference: *reference,
    };
    let mut params = Params::<f32>::zeros(layout.n_gaussians(), layout.n_coeffs());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = cfg.init_radius;
    for slot in params.position.iter_mut() {
        *slot = loop {
            let offset: [f64; 3] = [
                rng.random_range(-1.0..=1.0) * r,
                rng.random_range(-1.0..=1.0) * r,
                rng.random_range(-1.0..=1.0) * r,
            ];
            let p = [
                (center[0] + offset[0]) as f32,
                (center[1] + offset[1]) as f32,
                (center[2] + offset[2]) as f32,
            ];
            let d: f64 = (0..3)
                .map(|k| (f64::from(p[k]) - center[k]).powi(2))
                .sum::<f64>()
                .sqrt();
            if d <= r {
                break p;
            }
        };
    }
    GaussianField::from_params(layout, params)
}

const MAGIC: &[u8; 4] = b"AGSF";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 4 + 8 * 3 + 8 * 4;

/// Serializes a field in the little-endian `AGSF` v1 layout.
pub fn encode_checkpoint(field: &GaussianField) -> Vec<u8> {
    let layout = field.layout();
    let k = layout.n_coeffs();
    let n = layout.n_gaussians();
    let mut out = Vec::with_capacity(HEADER_LEN + n * 4 * (5 + 2 * k));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(layout.n_bins as u32).to_le_bytes());
    out.extend_from_slice(&(layout.n_frames as u32).to_le_bytes());
    out.extend_from_slice(&layout.sh_degree.to_le_bytes());
    for v in layout.reference.position() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in layout.reference.orientation().to_array() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let p = field.params();
    for i in 0..n {
        for v in p.position[i] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in p.c_mono_of(i) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in p.c_diff_of(i) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&p.alpha_raw[i].to_le_bytes());
        out.extend_from_slice(&p.delta[i].to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| Error::CorruptCheckpoint("truncated".into()))?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice length"))
    }

    fn u32(&mut self) -> Result<u32> {
        self.take::<4>().map(u32::from_le_bytes)
    }

    fn f32(&mut self) -> Result<f32> {
        self.take::<4>().map(f32::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64> {
        self.take::<8>().map(f64::from_le_bytes)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<GaussianField> {
    let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
    let mut r = Reader { buf: bytes, pos: 0 };
    if &r.take::<4>()? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::CorruptCheckpoint(format!("unsupported version {version}")));
    }
    let n_bins = r.u32()? as usize;
    let n_frames = r.u32()? as usize;
    let sh_degree = r.u32()?;
    if sh_degree > sh::MAX_DEGREE {
        return Err(Error::CorruptCheckpoint(format!("sh degree {sh_degree}")));
    }
    let p_ref = [r.f64()?, r.f64()?, r.f64()?];
    let q = Quaternion::from_array([r.f64()?, r.f64()?, r.f64()?, r.f64()?]);
    let reference = ListenerPose::new(p_ref, q)
        .map_err(|e| Error::CorruptCheckpoint(format!("reference pose: {e}")))?;

    let k = sh::n_coeffs(sh_degree);
    let n = n_bins
        .checked_mul(n_frames)
        .ok_or_else(|| corrupt("dimension overflow"))?;
    let record = 4 * (5 + 2 * k);
    let expected = n
        .checked_mul(record)
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| corrupt("dimension overflow"))?;
    if bytes.len() < expected {
        return Err(corrupt("truncated"));
    }
    if bytes.len() > expected {
        return Err(corrupt("trailing bytes"));
    }

    let mut params = Params::<f32>::zeros(n, k);
    for i in 0..n {
        params.position[i] = [r.f32()?, r.f32()?, r.f32()?];
        for c in params.c_mono_of_mut(i) {
            *c = r.f32()?;
        }
        for c in params.c_diff_of_mut(i) {
            *c = r.f32()?;
        }
        params.alpha_raw[i] = r.f32()?;
        params.delta[i] = r.f32()?;
    }
    let layout = FieldLayout {
        n_bins,
        n_frames,
        sh_degree,
        reference,
    };
    GaussianField::from_params(layout, params)
}

pub fn save_checkpoint(field: &GaussianField, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(field)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<GaussianField> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Flat indices of the bins kept at magnitude percentile `percentile`.
///
/// Keeps the `max(1, ceil((1 - p/100) * n))` largest bins, ties broken by
/// `(f, t)` order; the result is in `(f, t)` order.
pub fn select_by_percentile(magnitude: &MagnitudeGrid, percentile: f64) -> Result<Vec<usize>> {
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::InvalidConfig(format!(
            "percentile {percentile} outside [0, 100]"
        )));
    }
    let n = magnitude.data.len();
    let keep = (((1.0 - percentile / 100.0) * n as f64).ceil() as usize).clamp(1, n.max(1));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| magnitude.data[b].total_cmp(&magnitude.data[a]).then(a.cmp(&b)));
    order.truncate(keep.min(n));
    order.sort_unstable();
    Ok(order)
}

/// One exported point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub position: [f32; 3],
    pub f: usize,
    pub t: usize,
    pub magnitude: f64,
}

pub fn point_cloud(
    field: &GaussianField,
    magnitude: &MagnitudeGrid,
    percentile: f64,
) -> Result<Vec<CloudPoint>> {
    if magnitude.dims() != field.layout().dims() {
        return Err(Error::DimensionMismatch {
            expected: field.layout().dims(),
            actual: magnitude.dims(),
        });
    }
    let nt = field.n_frames();
    Ok(select_by_percentile(magnitude, percentile)?
        .into_iter()
        .map(|i| CloudPoint {
            position: field.params().position[i],
            f: i / nt,
            t: i % nt,
            magnitude: magnitude.data[i],
        })
        .collect())
}

/// Writes `x,y,z,f,t,magnitude` rows for the Gaussians above `percentile`.
pub fn export_point_cloud(
    field: &GaussianField,
    magnitude: &MagnitudeGrid,
    percentile: f64,
    path: &Path,
) -> Result<usize> {
    let points = point_cloud(field, magnitude, percentile)?;
    let mut out = Vec::with_capacity(32 * points.len() + 32);
    writeln!(out, "x,y,z,f,t,magnitude").expect("write to vec");
    for p in &points {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            p.position[0], p.position[1], p.position[2], p.f, p.t, p.magnitude
        )
        .expect("write to vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    Ok(points.len())
}

/// Magnitude-weighted mean effective decay exponent over the bins kept at
/// `percentile`.
pub fn weighted_alpha(field: &GaussianField, magnitude: &MagnitudeGrid, percentile: f64) -> Result<f64> {
    let points = point_cloud(field, magnitude, percentile)?;
    let nt = field.n_frames();
    let (mut num, mut den) = (0.0, 0.0);
    for p in &points {
        let i = p.f * nt + p.t;
        num += p.magnitude * effective_alpha(f64::from(field.params().alpha_raw[i]));
        den += p.magnitude;
    }
    if !(den > 0.0) {
        return Err(Error::NonFinite("weighted alpha of a silent selection"));
    }
    Ok(num / den)
}

/// Magnitude-weighted centroid of a point set.
pub fn weighted_centroid(points: &[CloudPoint]) -> Option<Vec3> {
    let total: f64 = points.iter().map(|p| p.magnitude).sum();
    if !(total > 0.0) {
        return None;
    }
    let mut c = [0.0; 3];
    for p in points {
        for k in 0..3 {
            c[k] += p.magnitude * f64::from(p.position[k]);
        }
    }
    Some(c.map(|v| v / total))
}
