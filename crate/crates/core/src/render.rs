//! Forward rendering of a Gaussian field at a listener pose.
//!
//! Per bin: directional masks from the SH coefficients, power-law distance
//! gain relative to the reference pose, the cascaded mono/difference
//! magnitude synthesis, and a rigid-sphere ITD phase correction on top of the
//! source phases.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{effective_alpha, sigmoid, FieldConfig, FieldLayout, GaussianField, Params};
use crate::geometry::{norm, sub, ListenerPose, Vec3};
use crate::sh::{self, Direction};
use crate::spectral::{istft, ComplexSpectrogram, MagnitudeGrid, SpectralGrid, StftConfig, Waveform};

/// Distances below this are treated as coincident with the listener.
pub const MIN_DISTANCE: f64 = 1e-9;

/// Azimuths with magnitude below this count as straight ahead (zero sign).
pub const AZIMUTH_ZERO: f64 = 1e-9;

pub(crate) const MAX_COEFFS: usize = sh::n_coeffs(sh::MAX_DEGREE);

/// Which rendering components are active. All on is the full model; each
/// switch reproduces one ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Toggles {
    pub distance_attenuation: bool,
    pub spherical_harmonics: bool,
    pub phase_correction: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self::FULL
    }
}

impl Toggles {
    pub const FULL: Self = Self {
        distance_attenuation: true,
        spherical_harmonics: true,
        phase_correction: true,
    };

    pub const NONE: Self = Self {
        distance_attenuation: false,
        spherical_harmonics: false,
        phase_correction: false,
    };

    pub fn without(mut self, component: Component) -> Self {
        match component {
            Component::DistanceAttenuation => self.distance_attenuation = false,
            Component::SphericalHarmonics => self.spherical_harmonics = false,
            Component::PhaseCorrection => self.phase_correction = false,
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    DistanceAttenuation,
    SphericalHarmonics,
    PhaseCorrection,
}

impl std::str::FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "da" => Ok(Self::DistanceAttenuation),
            "sh" => Ok(Self::SphericalHarmonics),
            "pc" => Ok(Self::PhaseCorrection),
            other => Err(Error::InvalidConfig(format!(
                "unknown component `{other}` (expected da, sh or pc)"
            ))),
        }
    }
}

/// Direction, azimuth and distance of a point relative to a listener.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ListenerGeometry {
    /// Unit vector from the listener toward the point, world frame.
    pub direction: Direction,
    /// Signed azimuth in the listener frame; positive means to the left.
    pub theta: f64,
    pub dist: f64,
    /// Offset expressed in the listener frame.
    pub(crate) local: Vec3,
    pub(crate) degenerate: bool,
}

pub fn listener_geometry(x: Vec3, pose: &ListenerPose) -> ListenerGeometry {
    let r = sub(x, pose.position());
    let dist = norm(r);
    if !(dist >= MIN_DISTANCE) {
        return ListenerGeometry {
            direction: Direction::new_unchecked(pose.forward()),
            theta: 0.0,
            dist: MIN_DISTANCE,
            local: [0.0; 3],
            degenerate: true,
        };
    }
    let u = pose.to_listener(r);
    ListenerGeometry {
        direction: Direction::new_unchecked([r[0] / dist, r[1] / dist, r[2] / dist]),
        theta: (-u[0]).atan2(-u[2]),
        dist,
        local: u,
        degenerate: false,
    }
}

/// `2 * sigmoid(<c, Y(d)>)`, in (0, 2).
pub fn mono_mask(c_mono: &[f64], d: Direction) -> Result<f64> {
    let y = basis_for(c_mono.len(), d)?;
    Ok(2.0 * sigmoid(sh::dot(c_mono, &y)))
}

/// `<c, Y(d)>`, unbounded.
pub fn diff_mask(c_diff: &[f64], d: Direction) -> Result<f64> {
    let y = basis_for(c_diff.len(), d)?;
    Ok(sh::dot(c_diff, &y))
}

fn basis_for(len: usize, d: Direction) -> Result<Vec<f64>> {
    let degree = ((len as f64).sqrt() as u32).saturating_sub(1);
    if sh::n_coeffs(degree) != len {
        return Err(Error::CoeffLength {
            coeffs: len,
            basis: sh::n_coeffs(degree),
        });
    }
    sh::sh_basis(d, degree)
}

/// `((|p_ref - x| + eps) / (|p - x| + eps))^alpha`.
pub fn distance_gain(x: Vec3, p: Vec3, p_ref: Vec3, alpha: f64, epsilon: f64) -> f64 {
    let num = norm(sub(p_ref, x)) + epsilon;
    let den = norm(sub(p, x)) + epsilon;
    (num / den).powf(alpha)
}

/// Low/high-frequency scale on the Woodworth path term: 1.5 up to 500 Hz,
/// 1.0 from 3 kHz, linear in log-frequency between.
pub fn itd_frequency_factor(freq_hz: f64) -> f64 {
    const LO: f64 = 500.0;
    const HI: f64 = 3000.0;
    if freq_hz <= LO {
        1.5
    } else if freq_hz >= HI {
        1.0
    } else {
        1.5 - 0.5 * (freq_hz / LO).ln() / (HI / LO).ln()
    }
}

/// Rigid-sphere ITD magnitude in seconds, front/back symmetric.
pub fn itd_rigid_sphere(freq_hz: f64, abs_theta: f64, cfg: &FieldConfig) -> Result<f64> {
    if !(0.0..=PI).contains(&abs_theta) {
        return Err(Error::AngleOutOfRange(abs_theta));
    }
    Ok(itd_eval(itd_frequency_factor(freq_hz) * cfg.head_radius / cfg.speed_of_sound, abs_theta).0)
}

/// `(tau, d tau / d abs_theta)` for the scale `k * a / c`.
#[inline]
fn itd_eval(scale: f64, abs_theta: f64) -> (f64, f64) {
    let folded = abs_theta.min(PI - abs_theta);
    let slope = if abs_theta <= PI - abs_theta { 1.0 } else { -1.0 };
    (
        scale * (folded.sin() + folded),
        scale * (folded.cos() + 1.0) * slope,
    )
}

#[inline]
fn azimuth_sign(theta: f64) -> f64 {
    if theta.abs() < AZIMUTH_ZERO {
        0.0
    } else {
        theta.signum()
    }
}

/// Bounded multiplicative residual `eta = 1 + lambda * tanh(delta)`.
#[inline]
pub fn phase_residual(delta: f64, lambda: f64) -> f64 {
    1.0 + lambda * delta.tanh()
}

/// Per-ear phase offsets `(dphi_L, dphi_R)` for target azimuth `theta` and
/// reference azimuth `theta_ref`. The ear on the source side is advanced.
pub fn phase_correction(
    theta: f64,
    theta_ref: f64,
    delta: f64,
    f_bin: usize,
    cfg: &FieldConfig,
    stft: &StftConfig,
) -> (f64, f64) {
    let scale = itd_frequency_factor(stft.bin_hz(f_bin)) * cfg.head_radius / cfg.speed_of_sound;
    let eta = phase_residual(delta, cfg.lambda_residual);
    let dtau = itd_eval(scale, theta.abs().min(PI)).0 - itd_eval(scale, theta_ref.abs().min(PI)).0;
    let dphi = azimuth_sign(theta) * 0.5 * stft.omega(f_bin) * eta * dtau;
    (dphi, -dphi)
}

/// Rendered binaural spectrogram plus per-bin diagnostics.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub spectrogram: ComplexSpectrogram,
    /// `A * G * M`.
    pub mono_mag: MagnitudeGrid,
    /// The difference mask `D`.
    pub diff_term: MagnitudeGrid,
    pub gain: MagnitudeGrid,
    pub dphi_l: MagnitudeGrid,
    pub dphi_r: MagnitudeGrid,
}

/// Everything that stays fixed while rendering one pose.
pub(crate) struct RenderContext<'a> {
    pub layout: &'a FieldLayout,
    pub cfg: &'a FieldConfig,
    pub toggles: Toggles,
    pub pose: &'a ListenerPose,
    pub itd_scale: Vec<f64>,
    pub half_omega: Vec<f64>,
    pub n_coeffs: usize,
}

impl<'a> RenderContext<'a> {
    pub fn new(
        layout: &'a FieldLayout,
        cfg: &'a FieldConfig,
        toggles: Toggles,
        pose: &'a ListenerPose,
        grid: &SpectralGrid,
    ) -> Result<Self> {
        cfg.validate()?;
        if grid.dims() != layout.dims() {
            return Err(Error::DimensionMismatch {
                expected: layout.dims(),
                actual: grid.dims(),
            });
        }
        let stft = &grid.stft;
        Ok(Self {
            layout,
            cfg,
            toggles,
            pose,
            itd_scale: (0..layout.n_bins)
                .map(|f| itd_frequency_factor(stft.bin_hz(f)) * cfg.head_radius / cfg.speed_of_sound)
                .collect(),
            half_omega: (0..layout.n_bins).map(|f| 0.5 * stft.omega(f)).collect(),
            n_coeffs: layout.n_coeffs(),
        })
    }
}

#[inline]
fn phase_of(z: Complex64) -> f64 {
    if z.re == 0.0 && z.im == 0.0 {
        0.0
    } else {
        z.im.atan2(z.re)
    }
}

/// Forward values of one bin, kept for the backward pass.
pub(crate) struct BinForward {
    pub amp: f64,
    pub phi: [f64; 2],
    pub geo: ListenerGeometry,
    pub geo_ref: ListenerGeometry,
    pub basis: [f64; MAX_COEFFS],
    pub basis_grad: [[f64; 3]; MAX_COEFFS],
    pub sig: f64,
    pub mask_m: f64,
    pub mask_d: f64,
    pub alpha: f64,
    pub ref_dist: f64,
    pub gain: f64,
    pub log_ratio: f64,
    pub mono: f64,
    pub pre_relu: [f64; 2],
    pub mag: [f64; 2],
    pub eta: f64,
    pub tanh_delta: f64,
    pub sign: f64,
    pub tau: (f64, f64),
    pub tau_ref: (f64, f64),
    pub dtau: f64,
    pub dphi: f64,
    /// Rendered complex value per ear.
    pub out: [Complex64; 2],
}

pub(crate) fn forward_bin(
    ctx: &RenderContext<'_>,
    params: &Params<f64>,
    src: [Complex64; 2],
    f: usize,
    i: usize,
    with_grad: bool,
) -> BinForward {
    let cfg = ctx.cfg;
    let amp = 0.5 * (src[0].norm() + src[1].norm());
    let phi = [phase_of(src[0]), phase_of(src[1])];
    let x = params.position[i];
    let geo = listener_geometry(x, ctx.pose);

    let mut basis = [0.0; MAX_COEFFS];
    let mut basis_grad = [[0.0; 3]; MAX_COEFFS];
    let (mut sig, mut mask_m, mut mask_d) = (0.5, 1.0, 0.0);
    if ctx.toggles.spherical_harmonics {
        let k = ctx.n_coeffs;
        sh::eval_basis(
            geo.direction.as_array(),
            ctx.layout.sh_degree,
            &mut basis[..k],
            with_grad.then_some(&mut basis_grad[..k]),
        );
        sig = sigmoid(sh::dot(params.c_mono_of(i), &basis[..k]));
        mask_m = 2.0 * sig;
        mask_d = sh::dot(params.c_diff_of(i), &basis[..k]);
    }

    let (mut alpha, mut ref_dist, mut gain, mut log_ratio) = (0.0, 0.0, 1.0, 0.0);
    if ctx.toggles.distance_attenuation {
        alpha = effective_alpha(params.alpha_raw[i]);
        ref_dist = norm(sub(ctx.layout.reference.position(), x));
        log_ratio = (ref_dist + cfg.epsilon).ln() - (geo.dist + cfg.epsilon).ln();
        gain = ((ref_dist + cfg.epsilon) / (geo.dist + cfg.epsilon)).powf(alpha);
    }

    let mono = amp * gain * mask_m;
    let pre_relu = [mono * (1.0 + mask_d), mono * (1.0 - mask_d)];
    // NaN passes through so a broken parameter surfaces as a non-finite loss
    let mag = pre_relu.map(|v| if v < 0.0 { 0.0 } else { v });

    let geo_ref;
    let (mut eta, mut tanh_delta, mut sign) = (1.0, 0.0, 0.0);
    let (mut tau, mut tau_ref, mut dtau, mut dphi) = ((0.0, 0.0), (0.0, 0.0), 0.0, 0.0);
    if ctx.toggles.phase_correction {
        geo_ref = listener_geometry(x, &ctx.layout.reference);
        tanh_delta = params.delta[i].tanh();
        eta = phase_residual(params.delta[i], cfg.lambda_residual);
        tau = itd_eval(ctx.itd_scale[f], geo.theta.abs().min(PI));
        tau_ref = itd_eval(ctx.itd_scale[f], geo_ref.theta.abs().min(PI));
        dtau = tau.0 - tau_ref.0;
        sign = azimuth_sign(geo.theta);
        dphi = sign * ctx.half_omega[f] * eta * dtau;
    } else {
        geo_ref = geo;
    }

    let out = [
        Complex64::from_polar(mag[0], phi[0] + dphi),
        Complex64::from_polar(mag[1], phi[1] - dphi),
    ];
    BinForward {
        amp,
        phi,
        geo,
        geo_ref,
        basis,
        basis_grad,
        sig,
        mask_m,
        mask_d,
        alpha,
        ref_dist,
        gain,
        log_ratio,
        mono,
        pre_relu,
        mag,
        eta,
        tanh_delta,
        sign,
        tau,
        tau_ref,
        dtau,
        dphi,
        out,
    }
}

pub(crate) fn check_source(layout: &FieldLayout, s_src: &ComplexSpectrogram) -> Result<()> {
    s_src.require_channels(2)?;
    if s_src.dims() != layout.dims() {
        return Err(Error::DimensionMismatch {
            expected: layout.dims(),
            actual: s_src.dims(),
        });
    }
    Ok(())
}

/// Renders the binaural spectrogram at `pose` from f64 parameters.
pub fn render_params(
    layout: &FieldLayout,
    params: &Params<f64>,
    s_src: &ComplexSpectrogram,
    pose: &ListenerPose,
    toggles: Toggles,
    cfg: &FieldConfig,
) -> Result<RenderOutput> {
    check_source(layout, s_src)?;
    let ctx = RenderContext::new(layout, cfg, toggles, pose, s_src.grid())?;
    let (nf, nt) = layout.dims();
    let n = nf * nt;
    let mut left = vec![Complex64::new(0.0, 0.0); n];
    let mut right = vec![Complex64::new(0.0, 0.0); n];
    let grid_of = || MagnitudeGrid {
        n_bins: nf,
        n_frames: nt,
        data: vec![0.0; n],
    };
    let (mut mono_mag, mut diff_term, mut gain) = (grid_of(), grid_of(), grid_of());
    let (mut dphi_l, mut dphi_r) = (grid_of(), grid_of());
    let (src_l, src_r) = (s_src.channel(0), s_src.channel(1));
    for f in 0..nf {
        for t in 0..nt {
            let i = f * nt + t;
            let b = forward_bin(&ctx, params, [src_l[i], src_r[i]], f, i, false);
            left[i] = b.out[0];
            right[i] = b.out[1];
            mono_mag.data[i] = b.mono;
            diff_term.data[i] = b.mask_d;
            gain.data[i] = b.gain;
            dphi_l.data[i] = b.dphi;
            dphi_r.data[i] = -b.dphi;
        }
    }
    let spectrogram = ComplexSpectrogram::new(*s_src.grid(), s_src.n_samples(), vec![left, right])?;
    Ok(RenderOutput {
        spectrogram,
        mono_mag,
        diff_term,
        gain,
        dphi_l,
        dphi_r,
    })
}

/// Renders a stored field at `pose`.
pub fn render(
    field: &GaussianField,
    s_src: &ComplexSpectrogram,
    pose: &ListenerPose,
    toggles: Toggles,
    cfg: &FieldConfig,
) -> Result<RenderOutput> {
    render_params(field.layout(), &field.params().to_f64(), s_src, pose, toggles, cfg)
}

/// Rendered binaural waveform at `pose`, via the inverse STFT.
pub fn render_waveform(
    field: &GaussianField,
    s_src: &ComplexSpectrogram,
    pose: &ListenerPose,
    toggles: Toggles,
    cfg: &FieldConfig,
) -> Result<Waveform> {
    istft(&render(field, s_src, pose, toggles, cfg)?.spectrogram)
}
