//! Shared fixtures for gradient checks in unit, acceptance and FFI tests.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::field::{FieldLayout, Params};
use crate::geometry::{ListenerPose, Quaternion};
use crate::render::listener_geometry;
use crate::sh::C0;
use crate::spectral::{ComplexSpectrogram, SpectralGrid, StftConfig};

/// 4 bins by 4 frames.
pub fn tiny_grid() -> SpectralGrid {
    SpectralGrid {
        stft: StftConfig {
            n_fft: 6,
            win_length: 6,
            hop: 3,
            sample_rate: 16000,
        },
        n_frames: 4,
    }
}

pub struct GradProblem {
    pub layout: FieldLayout,
    pub params: Params<f64>,
    pub source: ComplexSpectrogram,
    pub targets: Vec<(ListenerPose, ComplexSpectrogram)>,
}

fn random_spec(rng: &mut ChaCha8Rng, grid: SpectralGrid) -> ComplexSpectrogram {
    let n = grid.n_cells();
    let mut ch = || {
        (0..n)
            .map(|_| Complex64::from_polar(rng.random_range(0.2..2.0), rng.random_range(-PI..PI)))
            .collect::<Vec<_>>()
    };
    let l = ch();
    let r = ch();
    ComplexSpectrogram::new(grid, 12, vec![l, r]).expect("fixture dims")
}

/// Listener 2.5-3.5 m from the origin, random yaw, mild tilt.
fn random_pose(rng: &mut ChaCha8Rng) -> ListenerPose {
    let a: f64 = rng.random_range(-PI..PI);
    let r = rng.random_range(2.5..3.5);
    let yaw: f64 = rng.random_range(-PI..PI);
    let tilt: f64 = rng.random_range(-0.3..0.3);
    let (cy, sy) = ((yaw / 2.0).cos(), (yaw / 2.0).sin());
    let (cx, sx) = ((tilt / 2.0).cos(), (tilt / 2.0).sin());
    // yaw about +y followed by tilt about +x
    let q = Quaternion::from_array([cy * cx, cy * sx, sy * cx, -sy * sx]);
    ListenerPose::normalized([r * a.sin(), rng.random_range(-0.3..0.3), r * a.cos()], q)
        .expect("unit quaternion")
}

fn near_kink(theta: f64) -> bool {
    [-PI, -FRAC_PI_2, 0.0, FRAC_PI_2, PI]
        .iter()
        .any(|k| (theta - k).abs() < 0.05)
}

/// Random field, source and two target poses on the tiny grid.
///
/// Central differences are only meaningful where the objective is smooth
/// on the scale of the step, so the fixture keeps every Gaussian away from
/// the azimuth sign flips and the ITD fold at 90 degrees, and keeps
/// `|D| >= 0.15` so neither `|S_L + S_R|` nor `|S_L - S_R|` can cancel.
pub fn grad_problem(seed: u64, degree: u32) -> GradProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = tiny_grid();
    let reference = random_pose(&mut rng);
    let poses = [random_pose(&mut rng), random_pose(&mut rng)];
    let layout = FieldLayout {
        n_bins: grid.n_bins(),
        n_frames: grid.n_frames,
        sh_degree: degree,
        reference,
    };
    let k = layout.n_coeffs();
    let mut params = Params::<f64>::zeros(layout.n_gaussians(), k);
    for i in 0..layout.n_gaussians() {
        params.position[i] = loop {
            let x = [
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.8..0.8),
            ];
            let ok = std::iter::once(&reference)
                .chain(&poses)
                .all(|p| !near_kink(listener_geometry(x, p).theta));
            if ok {
                break x;
            }
        };
        for v in params.c_mono_of_mut(i) {
            *v = rng.random_range(-0.5..0.5);
        }
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let cd = params.c_diff_of_mut(i);
        cd[0] = sign * rng.random_range(0.3..0.6) / C0;
        for v in cd.iter_mut().skip(1) {
            *v = rng.random_range(-0.02..0.02);
        }
        params.alpha_raw[i] = rng.random_range(-1.0..1.0);
        params.delta[i] = rng.random_range(-1.0..1.0);
    }
    let source = random_spec(&mut rng, grid);
    let targets = poses
        .into_iter()
        .map(|p| (p, random_spec(&mut rng, grid)))
        .collect();
    GradProblem {
        layout,
        params,
        source,
        targets,
    }
}
