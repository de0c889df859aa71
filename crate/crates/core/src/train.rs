//! Hand-written reverse pass through rendering and the loss, Adam, and the
//! epoch loop.
//!
//! Every Gaussian influences only its own bin, so the backward pass is a
//! per-bin chain rule with no cross-bin accumulation except the scalar loss.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{effective_alpha_grad, init_field, FieldConfig, FieldLayout, GaussianField, Params};
use crate::geometry::{dot3, sub, ListenerPose, Vec3};
use crate::loss::{mag_term, phase, phase_term, LossComponents, LossWeights};
use crate::render::{check_source, forward_bin, RenderContext, Toggles};
use crate::scene_io::Scene;
use crate::spectral::{stft, ComplexSpectrogram};

/// Per-parameter derivatives, laid out exactly like the field parameters.
pub type GradientBuffer = Params<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_position: f64,
    pub lr_other: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub weights: LossWeights,
    pub toggles: Toggles,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            lr_position: 2e-2,
            lr_other: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: None,
            seed: 0,
            weights: LossWeights::default(),
            toggles: Toggles::FULL,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lr_position > 0.0) || !(self.lr_other > 0.0) {
            return bad("learning rates must be > 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must be in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be > 0");
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad("grad_clip must be > 0");
            }
        }
        self.weights.validate()
    }
}

#[inline]
fn theta_grad(local: Vec3, g_theta: f64) -> Vec3 {
    // theta = atan2(-u_x, -u_z)
    let rho2 = local[0] * local[0] + local[2] * local[2];
    if rho2 == 0.0 {
        return [0.0; 3];
    }
    [g_theta * local[2] / rho2, 0.0, -g_theta * local[0] / rho2]
}

#[inline]
fn signum0(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v.signum()
    }
}

struct Sums {
    mono: f64,
    diff: f64,
    phase_l: f64,
    phase_r: f64,
}

fn backward_into(
    ctx: &RenderContext<'_>,
    params: &Params<f64>,
    s_src: &ComplexSpectrogram,
    s_gt: &ComplexSpectrogram,
    w: &LossWeights,
    grads: &mut GradientBuffer,
) -> Result<LossComponents> {
    let (nf, nt) = ctx.layout.dims();
    let n = nf * nt;
    let scale = 1.0 / n as f64;
    let fl = w.log_floor;
    let k = ctx.n_coeffs;
    let toggles = ctx.toggles;
    let p_ref = ctx.layout.reference.position();
    let cfg = ctx.cfg;
    let (src_l, src_r) = (s_src.channel(0), s_src.channel(1));
    let (gt_l, gt_r) = (s_gt.channel(0), s_gt.channel(1));
    let mut sums = Sums {
        mono: 0.0,
        diff: 0.0,
        phase_l: 0.0,
        phase_r: 0.0,
    };

    for f in 0..nf {
        let mut row = Sums {
            mono: 0.0,
            diff: 0.0,
            phase_l: 0.0,
            phase_r: 0.0,
        };
        for t in 0..nt {
            let i = f * nt + t;
            let b = forward_bin(ctx, params, [src_l[i], src_r[i]], f, i, true);
            let (gl, gr) = (gt_l[i], gt_r[i]);
            let [out_l, out_r] = b.out;
            let p_mono = out_l + out_r;
            let p_diff = out_l - out_r;
            let (qm, qd) = (p_mono.norm(), p_diff.norm());
            let em = ((gl + gr).norm() + fl).ln() - (qm + fl).ln();
            let ed = ((gl - gr).norm() + fl).ln() - (qd + fl).ln();
            let (gamma_l, gamma_r) = (phase(gl), phase(gr));
            let lm = em * em;
            let ld = ed * ed;
            let lpl = phase_term(gamma_l, phase(out_l));
            let lpr = phase_term(gamma_r, phase(out_r));
            if !(lm.is_finite() && ld.is_finite() && lpl.is_finite() && lpr.is_finite()) {
                return Err(Error::NonFiniteLoss { f, t });
            }
            debug_assert!((lm - mag_term((gl + gr).norm(), qm, fl)).abs() <= 1e-12 * lm.max(1.0));
            row.mono += lm;
            row.diff += ld;
            row.phase_l += lpl;
            row.phase_r += lpr;

            // d loss / d |P_mono|, d loss / d |P_diff|
            let g_qm = -2.0 * em / (qm + fl) * scale;
            let g_qd = -2.0 * w.lambda_diff * ed / (qd + fl) * scale;
            let beta = [b.phi[0] + b.dphi, b.phi[1] - b.dphi];
            let unit = [Complex64::from_polar(1.0, beta[0]), Complex64::from_polar(1.0, beta[1])];
            let j = Complex64::new(0.0, 1.0);
            let mut g_m = [0.0; 2];
            let mut g_beta = [0.0; 2];
            if qm > 0.0 {
                let h = p_mono.conj() / qm;
                g_m[0] += g_qm * (h * unit[0]).re;
                g_m[1] += g_qm * (h * unit[1]).re;
                g_beta[0] += g_qm * (h * j * out_l).re;
                g_beta[1] += g_qm * (h * j * out_r).re;
            }
            if qd > 0.0 {
                let h = p_diff.conj() / qd;
                g_m[0] += g_qd * (h * unit[0]).re;
                g_m[1] -= g_qd * (h * unit[1]).re;
                g_beta[0] += g_qd * (h * j * out_l).re;
                g_beta[1] -= g_qd * (h * j * out_r).re;
            }
            let g_phs = w.lambda_phs * scale;
            if b.mag[0] > 0.0 {
                g_beta[0] += g_phs * -2.0 * (gamma_l - beta[0]).sin();
            }
            if b.mag[1] > 0.0 {
                g_beta[1] += g_phs * -2.0 * (gamma_r - beta[1]).sin();
            }
            let g_dphi = g_beta[0] - g_beta[1];

            let g_pre = [
                if b.pre_relu[0] > 0.0 { g_m[0] } else { 0.0 },
                if b.pre_relu[1] > 0.0 { g_m[1] } else { 0.0 },
            ];
            let g_mono = g_pre[0] * (1.0 + b.mask_d) + g_pre[1] * (1.0 - b.mask_d);
            let g_d = (g_pre[0] - g_pre[1]) * b.mono;
            let g_gain = g_mono * b.amp * b.mask_m;
            let g_mask_m = g_mono * b.amp * b.gain;

            let x = params.position[i];
            let mut g_x = [0.0; 3];
            let dir = b.geo.direction.as_array();

            if toggles.spherical_harmonics {
                let g_logit = g_mask_m * 2.0 * b.sig * (1.0 - b.sig);
                let cm = params.c_mono_of(i);
                let cd = params.c_diff_of(i);
                let mut g_dir = [0.0; 3];
                {
                    let gm = grads.c_mono_of_mut(i);
                    for c in 0..k {
                        gm[c] = g_logit * b.basis[c];
                    }
                }
                let gd = grads.c_diff_of_mut(i);
                for c in 0..k {
                    gd[c] = g_d * b.basis[c];
                    let g_y = g_logit * cm[c] + g_d * cd[c];
                    for a in 0..3 {
                        g_dir[a] += g_y * b.basis_grad[c][a];
                    }
                }
                if !b.geo.degenerate {
                    let radial = dot3(dir, g_dir);
                    for a in 0..3 {
                        g_x[a] += (g_dir[a] - dir[a] * radial) / b.geo.dist;
                    }
                }
            }

            if toggles.distance_attenuation {
                let g_alpha = g_gain * b.gain * b.log_ratio;
                grads.alpha_raw[i] = g_alpha * effective_alpha_grad(params.alpha_raw[i]);
                if !b.geo.degenerate {
                    let g_dist = -g_gain * b.alpha * b.gain / (b.geo.dist + cfg.epsilon);
                    for a in 0..3 {
                        g_x[a] += g_dist * dir[a];
                    }
                }
                if b.ref_dist > 0.0 {
                    let g_rr = g_gain * b.alpha * b.gain / (b.ref_dist + cfg.epsilon);
                    let r = sub(x, p_ref);
                    for a in 0..3 {
                        g_x[a] += g_rr * r[a] / b.ref_dist;
                    }
                }
            }

            if toggles.phase_correction {
                let common = b.sign * ctx.half_omega[f];
                grads.delta[i] =
                    g_dphi * common * b.dtau * cfg.lambda_residual * (1.0 - b.tanh_delta * b.tanh_delta);
                let g_dtau = g_dphi * common * b.eta;
                if !b.geo.degenerate {
                    let g_theta = g_dtau * b.tau.1 * signum0(b.geo.theta);
                    let g_u = theta_grad(b.geo.local, g_theta);
                    let g_w = ctx.pose.to_world(g_u);
                    for a in 0..3 {
                        g_x[a] += g_w[a];
                    }
                }
                if !b.geo_ref.degenerate {
                    let g_theta = -g_dtau * b.tau_ref.1 * signum0(b.geo_ref.theta);
                    let g_u = theta_grad(b.geo_ref.local, g_theta);
                    let g_w = ctx.layout.reference.to_world(g_u);
                    for a in 0..3 {
                        g_x[a] += g_w[a];
                    }
                }
            }
            grads.position[i] = g_x;
        }
        sums.mono += row.mono;
        sums.diff += row.diff;
        sums.phase_l += row.phase_l;
        sums.phase_r += row.phase_r;
    }

    let mut c = LossComponents {
        total: 0.0,
        mono_mag: sums.mono * scale,
        diff_mag: sums.diff * scale,
        phase_l: sums.phase_l * scale,
        phase_r: sums.phase_r * scale,
    };
    c.total = c.recombine(w);
    Ok(c)
}

/// Loss and exact gradients with respect to every Gaussian parameter for
/// one training pose.
#[allow(clippy::too_many_arguments)]
pub fn backward(
    layout: &FieldLayout,
    params: &Params<f64>,
    s_src: &ComplexSpectrogram,
    pose: &ListenerPose,
    s_gt: &ComplexSpectrogram,
    weights: &LossWeights,
    toggles: Toggles,
    field_cfg: &FieldConfig,
) -> Result<(LossComponents, GradientBuffer)> {
    check_source(layout, s_src)?;
    check_source(layout, s_gt)?;
    weights.validate()?;
    let ctx = RenderContext::new(layout, field_cfg, toggles, pose, s_src.grid())?;
    let mut grads = params.zeros_like();
    let loss = backward_into(&ctx, params, s_src, s_gt, weights, &mut grads)?;
    Ok((loss, grads))
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Params<f64>,
    v: Params<f64>,
}

impl AdamState {
    pub fn new(like: &Params<f64>) -> Self {
        Self {
            m: like.zeros_like(),
            v: like.zeros_like(),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, step: u64, cfg: &TrainConfig) {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..p.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
}

/// One bias-corrected Adam update; positions use `lr_position`, everything
/// else `lr_other`. `step` counts from 1.
pub fn adam_step(params: &mut Params<f64>, grads: &GradientBuffer, state: &mut AdamState, step: u64, cfg: &TrainConfig) {
    assert!(step >= 1, "adam step counts from 1");
    let (m, v) = (&mut state.m, &mut state.v);
    adam_update(
        params.position.as_flattened_mut(),
        grads.position.as_flattened(),
        m.position.as_flattened_mut(),
        v.position.as_flattened_mut(),
        cfg.lr_position,
        step,
        cfg,
    );
    adam_update(&mut params.c_mono, &grads.c_mono, &mut m.c_mono, &mut v.c_mono, cfg.lr_other, step, cfg);
    adam_update(&mut params.c_diff, &grads.c_diff, &mut m.c_diff, &mut v.c_diff, cfg.lr_other, step, cfg);
    adam_update(
        &mut params.alpha_raw,
        &grads.alpha_raw,
        &mut m.alpha_raw,
        &mut v.alpha_raw,
        cfg.lr_other,
        step,
        cfg,
    );
    adam_update(&mut params.delta, &grads.delta, &mut m.delta, &mut v.delta, cfg.lr_other, step, cfg);
}

fn grad_norm(g: &GradientBuffer) -> f64 {
    g.position
        .as_flattened()
        .iter()
        .chain(&g.c_mono)
        .chain(&g.c_diff)
        .chain(&g.alpha_raw)
        .chain(&g.delta)
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

fn scale_grads(g: &mut GradientBuffer, s: f64) {
    for v in g
        .position
        .as_flattened_mut()
        .iter_mut()
        .chain(g.c_mono.iter_mut())
        .chain(g.c_diff.iter_mut())
        .chain(g.alpha_raw.iter_mut())
        .chain(g.delta.iter_mut())
    {
        *v *= s;
    }
}

/// Mean loss components over the training poses of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub mono_mag: f64,
    pub diff_mag: f64,
    pub phase_l: f64,
    pub phase_r: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    /// Newline-delimited JSON, one record per epoch.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for r in &self.epochs {
            out.push_str(&serde_json::to_string(r).expect("plain struct serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(self.to_ndjson().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

/// Spectrograms of a scene, computed once per training run.
pub struct PreparedScene {
    pub source: ComplexSpectrogram,
    pub targets: Vec<(ListenerPose, ComplexSpectrogram)>,
}

impl PreparedScene {
    pub fn new(scene: &Scene) -> Result<Self> {
        let source = stft(&scene.source_clip, &scene.stft)?;
        let targets = scene
            .targets
            .iter()
            .map(|t| Ok((t.pose, stft(&t.audio, &scene.stft)?)))
            .collect::<Result<_>>()?;
        Ok(Self { source, targets })
    }
}

/// Trains a field on every training pose of `scene`, calling `on_epoch`
/// after each epoch.
pub fn train_with(
    scene: &Scene,
    cfg: &TrainConfig,
    field_cfg: &FieldConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(GaussianField, TrainHistory)> {
    cfg.validate()?;
    field_cfg.validate()?;
    if scene.targets.is_empty() {
        return Err(Error::EmptyScene);
    }
    let prepared = PreparedScene::new(scene)?;
    let field = init_field(
        prepared.source.grid(),
        scene.pose_center(),
        &scene.reference_pose,
        field_cfg,
        cfg.seed,
    )?;
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok((field, history));
    }

    let layout = *field.layout();
    let mut params = field.params().to_f64();
    let mut grads = params.zeros_like();
    let mut adam = AdamState::new(&params);
    let mut step = 0u64;
    let n_targets = prepared.targets.len() as f64;
    for epoch in 1..=cfg.epochs {
        let mut acc = LossComponents::default();
        for (pose, gt) in &prepared.targets {
            let ctx = RenderContext::new(&layout, field_cfg, cfg.toggles, pose, prepared.source.grid())?;
            let loss = backward_into(&ctx, &params, &prepared.source, gt, &cfg.weights, &mut grads)?;
            acc.total += loss.total;
            acc.mono_mag += loss.mono_mag;
            acc.diff_mag += loss.diff_mag;
            acc.phase_l += loss.phase_l;
            acc.phase_r += loss.phase_r;
            if let Some(max) = cfg.grad_clip {
                let norm = grad_norm(&grads);
                if norm > max {
                    scale_grads(&mut grads, max / norm);
                }
            }
            step += 1;
            adam_step(&mut params, &grads, &mut adam, step, cfg);
        }
        if !params.all_finite() {
            return Err(Error::NonFinite("parameters after update"));
        }
        let record = EpochRecord {
            epoch,
            total: acc.total / n_targets,
            mono_mag: acc.mono_mag / n_targets,
            diff_mag: acc.diff_mag / n_targets,
            phase_l: acc.phase_l / n_targets,
            phase_r: acc.phase_r / n_targets,
        };
        on_epoch(&record);
        history.epochs.push(record);
    }
    let field = GaussianField::from_params(layout, params.to_f32())?;
    Ok((field, history))
}

pub fn train(scene: &Scene, cfg: &TrainConfig, field_cfg: &FieldConfig) -> Result<(GaussianField, TrainHistory)> {
    train_with(scene, cfg, field_cfg, |_| {})
}

/// Largest relative error between analytic and central-difference gradients,
/// per parameter kind.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GradCheck {
    pub position: f64,
    pub c_mono: f64,
    pub c_diff: f64,
    pub alpha_raw: f64,
    pub delta: f64,
}

impl GradCheck {
    pub fn max(&self) -> f64 {
        [self.position, self.c_mono, self.c_diff, self.alpha_raw, self.delta]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// Compares [`backward`] summed over `targets` against central differences
/// of the rendered loss, with step `rel_step * max(|v|, 1)`.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    layout: &FieldLayout,
    params: &Params<f64>,
    s_src: &ComplexSpectrogram,
    targets: &[(ListenerPose, ComplexSpectrogram)],
    weights: &LossWeights,
    toggles: Toggles,
    field_cfg: &FieldConfig,
    rel_step: f64,
) -> Result<GradCheck> {
    let mut analytic = params.zeros_like();
    for (pose, gt) in targets {
        let (_, g) = backward(layout, params, s_src, pose, gt, weights, toggles, field_cfg)?;
        for (a, b) in analytic.position.as_flattened_mut().iter_mut().zip(g.position.as_flattened()) {
            *a += b;
        }
        for (dst, src) in [
            (&mut analytic.c_mono, &g.c_mono),
            (&mut analytic.c_diff, &g.c_diff),
            (&mut analytic.alpha_raw, &g.alpha_raw),
            (&mut analytic.delta, &g.delta),
        ] {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
    }
    let loss_at = |p: &Params<f64>| -> Result<f64> {
        let mut sum = 0.0;
        for (pose, gt) in targets {
            let out = crate::render::render_params(layout, p, s_src, pose, toggles, field_cfg)?;
            sum += crate::loss::total_loss(gt, &out.spectrogram, weights)?.total;
        }
        Ok(sum)
    };
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);

    let mut report = GradCheck::default();
    let mut probe = params.clone();
    macro_rules! check_kind {
        ($field:ident, $flat:ident, $flat_mut:ident, $slot:ident) => {{
            let len = params.$field.$flat().len();
            for j in 0..len {
                let v = params.$field.$flat()[j];
                let h = rel_step * v.abs().max(1.0);
                probe.$field.$flat_mut()[j] = v + h;
                let up = loss_at(&probe)?;
                probe.$field.$flat_mut()[j] = v - h;
                let down = loss_at(&probe)?;
                probe.$field.$flat_mut()[j] = v;
                let numeric = (up - down) / (2.0 * h);
                report.$slot = report.$slot.max(rel(analytic.$field.$flat()[j], numeric));
            }
        }};
    }
    check_kind!(position, as_flattened, as_flattened_mut, position);
    check_kind!(c_mono, as_slice, as_mut_slice, c_mono);
    check_kind!(c_diff, as_slice, as_mut_slice, c_diff);
    check_kind!(alpha_raw, as_slice, as_mut_slice, alpha_raw);
    check_kind!(delta, as_slice, as_mut_slice, delta);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{grad_problem, GradProblem};

    fn problem(seed: u64, degree: u32) -> GradProblem {
        grad_problem(seed, degree)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = FieldConfig::default();
        for seed in 0..8 {
            for degree in [0, 1, 2, 3] {
                let p = problem(seed, degree);
                let check = gradient_check(
                    &p.layout,
                    &p.params,
                    &p.source,
                    &p.targets,
                    &LossWeights::default(),
                    Toggles::FULL,
                    &cfg,
                    1e-4,
                )
                .unwrap();
                assert!(check.max() < 1e-4, "seed {seed} degree {degree}: {check:?}");
            }
        }
    }

    #[test]
    fn gradients_match_under_ablations() {
        let cfg = FieldConfig::default();
        let p = problem(11, 2);
        for toggles in [
            Toggles::NONE,
            Toggles::FULL.without(crate::render::Component::DistanceAttenuation),
            Toggles::FULL.without(crate::render::Component::SphericalHarmonics),
            Toggles::FULL.without(crate::render::Component::PhaseCorrection),
        ] {
            let w = LossWeights {
                lambda_diff: 0.7,
                lambda_phs: 0.3,
                log_floor: 1e-3,
            };
            let check =
                gradient_check(&p.layout, &p.params, &p.source, &p.targets, &w, toggles, &cfg, 1e-4).unwrap();
            assert!(check.max() < 1e-4, "{toggles:?}: {check:?}");
        }
    }

    #[test]
    fn loss_matches_rendered_loss() {
        let cfg = FieldConfig::default();
        let p = problem(5, 2);
        let w = LossWeights::default();
        let (pose, gt) = &p.targets[0];
        let (loss, _) = backward(&p.layout, &p.params, &p.source, pose, gt, &w, Toggles::FULL, &cfg).unwrap();
        let out = crate::render::render_params(&p.layout, &p.params, &p.source, pose, Toggles::FULL, &cfg).unwrap();
        let expect = crate::loss::total_loss(gt, &out.spectrogram, &w).unwrap();
        assert!((loss.total - expect.total).abs() < 1e-12 * expect.total.max(1.0));
        assert!((loss.phase_l - expect.phase_l).abs() < 1e-12);
    }

    #[test]
    fn delta_gradient_vanishes_without_phase_path() {
        let cfg = FieldConfig::default();
        let p = problem(3, 2);
        let (pose, gt) = &p.targets[1];
        let no_pc = Toggles::FULL.without(crate::render::Component::PhaseCorrection);
        let (_, g) = backward(&p.layout, &p.params, &p.source, pose, gt, &LossWeights::default(), no_pc, &cfg).unwrap();
        assert!(g.delta.iter().all(|&v| v == 0.0), "{:?}", g.delta);
        assert!(g.c_mono.iter().any(|&v| v != 0.0));

        // The interaural phase still shapes |S_L +- S_R|, so with the
        // phase weight at zero delta keeps a magnitude-driven gradient.
        let w = LossWeights {
            lambda_phs: 0.0,
            ..LossWeights::default()
        };
        let (_, g) = backward(&p.layout, &p.params, &p.source, pose, gt, &w, Toggles::FULL, &cfg).unwrap();
        assert!(g.delta.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn stationary_at_exact_fit() {
        // the target is the rendering itself, so every term sits at its minimum
        let cfg = FieldConfig::default();
        let p = problem(8, 1);
        let (pose, _) = &p.targets[0];
        let out = crate::render::render_params(&p.layout, &p.params, &p.source, pose, Toggles::FULL, &cfg).unwrap();
        let (loss, g) = backward(
            &p.layout,
            &p.params,
            &p.source,
            pose,
            &out.spectrogram,
            &LossWeights::default(),
            Toggles::FULL,
            &cfg,
        )
        .unwrap();
        assert!(loss.total < 1e-20);
        let norm = grad_norm(&g);
        assert!(norm < 1e-8, "{norm}");
    }

    #[test]
    fn non_finite_loss_reports_bin() {
        let cfg = FieldConfig::default();
        let mut p = problem(2, 1);
        let k = p.params.n_coeffs();
        p.params.c_mono[5 * k] = f64::NAN;
        let (pose, gt) = &p.targets[0];
        let err = backward(&p.layout, &p.params, &p.source, pose, gt, &LossWeights::default(), Toggles::FULL, &cfg)
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { f: 1, t: 1 }), "{err}");
    }

    #[test]
    fn first_adam_step() {
        let cfg = TrainConfig {
            lr_position: 1e-3,
            lr_other: 1e-3,
            ..TrainConfig::default()
        };
        let mut p = Params::<f64>::zeros(3, 4);
        let mut g = p.zeros_like();
        g.position.iter_mut().for_each(|v| *v = [1.0; 3]);
        for v in g.c_mono.iter_mut().chain(&mut g.c_diff).chain(&mut g.alpha_raw).chain(&mut g.delta) {
            *v = 1.0;
        }
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &g, &mut state, 1, &cfg);
        let expect = -1e-3 / (1.0 + 1e-8);
        for v in p.position.as_flattened().iter().chain(&p.c_mono).chain(&p.alpha_raw).chain(&p.delta) {
            assert!((v - expect).abs() < 1e-15, "{v}");
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let cfg = TrainConfig::default();
        let mut p = Params::<f64>::zeros(2, 1);
        p.delta[0] = 0.25;
        let before = p.clone();
        let g = p.zeros_like();
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &g, &mut state, 1, &cfg);
        assert_eq!(p, before);
    }

    #[test]
    fn separate_learning_rates() {
        let cfg = TrainConfig {
            lr_position: 1e-4,
            lr_other: 1e-2,
            ..TrainConfig::default()
        };
        let mut p = Params::<f64>::zeros(1, 1);
        let mut g = p.zeros_like();
        g.position[0] = [2.0, -2.0, 0.0];
        g.delta[0] = -3.0;
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &g, &mut state, 1, &cfg);
        assert!((p.position[0][0] + 1e-4).abs() < 1e-12);
        assert!((p.position[0][1] - 1e-4).abs() < 1e-12);
        assert_eq!(p.position[0][2], 0.0);
        assert!((p.delta[0] - 1e-2).abs() < 1e-10);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            beta1: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            lr_position: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            grad_clip: Some(-1.0),
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn history_is_ndjson() {
        let h = TrainHistory {
            epochs: vec![EpochRecord {
                epoch: 1,
                total: 1.5,
                mono_mag: 1.0,
                diff_mag: 0.25,
                phase_l: 1.0,
                phase_r: 1.5,
            }],
        };
        let text = h.to_ndjson();
        assert_eq!(text.lines().count(), 1);
        let back: EpochRecord = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(back, h.epochs[0]);
    }
}
