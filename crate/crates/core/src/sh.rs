//! Real spherical harmonics, orthonormal, without the Condon-Shortley phase.
//!
//! Coefficients are ordered `(l, m) = (0,0), (1,-1), (1,0), (1,1), (2,-2), ...`.

use crate::error::{Error, Result};

pub const MAX_DEGREE: u32 = 3;

pub(crate) const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2A: f64 = 1.092_548_430_592_079_2;
const C2B: f64 = 0.315_391_565_252_520_05;
const C2C: f64 = 0.546_274_215_296_039_6;
const C3A: f64 = 0.590_043_589_926_643_5;
const C3B: f64 = 2.890_611_442_640_554;
const C3C: f64 = 0.457_045_799_464_465_8;
const C3D: f64 = 0.373_176_332_590_115_4;
const C3E: f64 = 1.445_305_721_320_277;

pub const fn n_coeffs(degree: u32) -> usize {
    ((degree + 1) * (degree + 1)) as usize
}

/// Degree `l` of the coefficient at flat index `i`.
pub fn degree_of(i: usize) -> u32 {
    (i as f64).sqrt().floor() as u32
}

/// Unit-norm direction in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction([f64; 3]);

impl Direction {
    pub const TOLERANCE: f64 = 1e-9;

    pub fn new(v: [f64; 3]) -> Result<Self> {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if (norm - 1.0).abs() > Self::TOLERANCE || !norm.is_finite() {
            return Err(Error::NonUnitDirection(norm));
        }
        Ok(Self(v))
    }

    /// Normalizes `v`; errors on a zero or non-finite vector.
    pub fn normalize(v: [f64; 3]) -> Result<Self> {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::NonUnitDirection(norm));
        }
        Ok(Self([v[0] / norm, v[1] / norm, v[2] / norm]))
    }

    pub(crate) fn new_unchecked(v: [f64; 3]) -> Self {
        Self(v)
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.0
    }
}

impl std::ops::Neg for Direction {
    type Output = Self;
    fn neg(self) -> Self {
        Self([-self.0[0], -self.0[1], -self.0[2]])
    }
}

pub fn check_degree(degree: u32) -> Result<()> {
    if degree > MAX_DEGREE {
        return Err(Error::UnsupportedDegree(degree));
    }
    Ok(())
}

/// Basis values `Y(d)` for all `(L+1)^2` functions up to `degree`.
pub fn sh_basis(d: Direction, degree: u32) -> Result<Vec<f64>> {
    check_degree(degree)?;
    let mut out = vec![0.0; n_coeffs(degree)];
    eval_basis(d.0, degree, &mut out, None);
    Ok(out)
}

/// `<c, Y>`.
pub fn sh_project(coeffs: &[f64], basis: &[f64]) -> Result<f64> {
    if coeffs.len() != basis.len() {
        return Err(Error::CoeffLength {
            coeffs: coeffs.len(),
            basis: basis.len(),
        });
    }
    Ok(dot(coeffs, basis))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Evaluates the polynomial forms at `v` (assumed unit) into `out`. When `grad`
/// is given it receives the Cartesian partials of each polynomial, used by
/// the backward pass after projection onto the tangent plane.
pub(crate) fn eval_basis(v: [f64; 3], degree: u32, out: &mut [f64], grad: Option<&mut [[f64; 3]]>) {
    let [x, y, z] = v;
    out[0] = C0;
    if degree >= 1 {
        out[1] = C1 * y;
        out[2] = C1 * z;
        out[3] = C1 * x;
    }
    if degree >= 2 {
        out[4] = C2A * x * y;
        out[5] = C2A * y * z;
        out[6] = C2B * (3.0 * z * z - 1.0);
        out[7] = C2A * x * z;
        out[8] = C2C * (x * x - y * y);
    }
    if degree >= 3 {
        out[9] = C3A * y * (3.0 * x * x - y * y);
        out[10] = C3B * x * y * z;
        out[11] = C3C * y * (5.0 * z * z - 1.0);
        out[12] = C3D * z * (5.0 * z * z - 3.0);
        out[13] = C3C * x * (5.0 * z * z - 1.0);
        out[14] = C3E * z * (x * x - y * y);
        out[15] = C3A * x * (x * x - 3.0 * y * y);
    }
    let Some(g) = grad else { return };
    g[0] = [0.0; 3];
    if degree >= 1 {
        g[1] = [0.0, C1, 0.0];
        g[2] = [0.0, 0.0, C1];
        g[3] = [C1, 0.0, 0.0];
    }
    if degree >= 2 {
        g[4] = [C2A * y, C2A * x, 0.0];
        g[5] = [0.0, C2A * z, C2A * y];
        g[6] = [0.0, 0.0, 6.0 * C2B * z];
        g[7] = [C2A * z, 0.0, C2A * x];
        g[8] = [2.0 * C2C * x, -2.0 * C2C * y, 0.0];
    }
    if degree >= 3 {
        g[9] = [6.0 * C3A * x * y, C3A * (3.0 * x * x - 3.0 * y * y), 0.0];
        g[10] = [C3B * y * z, C3B * x * z, C3B * x * y];
        g[11] = [0.0, C3C * (5.0 * z * z - 1.0), 10.0 * C3C * y * z];
        g[12] = [0.0, 0.0, C3D * (15.0 * z * z - 3.0)];
        g[13] = [C3C * (5.0 * z * z - 1.0), 0.0, 10.0 * C3C * x * z];
        g[14] = [2.0 * C3E * x * z, -2.0 * C3E * y * z, C3E * (x * x - y * y)];
        g[15] = [C3A * (3.0 * x * x - 3.0 * y * y), -6.0 * C3A * x * y, 0.0];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_dir(rng: &mut ChaCha8Rng) -> Direction {
        let v: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        Direction::normalize(v).unwrap()
    }

    #[test]
    fn degree_zero_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let y = sh_basis(random_dir(&mut rng), 0).unwrap();
            assert_eq!(y, vec![C0]);
        }
        assert!((C0 - 0.2820948).abs() < 1e-7);
    }

    #[test]
    fn pole_values() {
        let y = sh_basis(Direction::new([0.0, 0.0, 1.0]).unwrap(), 1).unwrap();
        assert!((y[2] - (3.0 / (4.0 * std::f64::consts::PI)).sqrt()).abs() < 1e-12);
        assert!((y[2] - 0.4886025).abs() < 1e-7);
        assert_eq!(y[1], 0.0);
        assert_eq!(y[3], 0.0);
    }

    #[test]
    fn monte_carlo_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let k = n_coeffs(3);
        let mut gram = vec![0.0; k * k];
        let samples = 1_000_000;
        let mut y = vec![0.0; k];
        for _ in 0..samples {
            eval_basis(random_dir(&mut rng).as_array(), 3, &mut y, None);
            for i in 0..k {
                for j in i..k {
                    gram[i * k + j] += y[i] * y[j];
                }
            }
        }
        let scale = 4.0 * std::f64::consts::PI / samples as f64;
        for i in 0..k {
            for j in i..k {
                let expect = if i == j { 1.0 } else { 0.0 };
                let got = gram[i * k + j] * scale;
                assert!((got - expect).abs() < 0.01, "({i},{j}) = {got}");
            }
        }
    }

    #[test]
    fn parity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let d = random_dir(&mut rng);
            let a = sh_basis(d, 3).unwrap();
            let b = sh_basis(-d, 3).unwrap();
            for i in 0..a.len() {
                let sign = if degree_of(i) % 2 == 1 { -1.0 } else { 1.0 };
                assert!((b[i] - sign * a[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cartesian_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let k = n_coeffs(3);
        for _ in 0..20 {
            let v = random_dir(&mut rng).as_array();
            let mut y = vec![0.0; k];
            let mut g = vec![[0.0; 3]; k];
            eval_basis(v, 3, &mut y, Some(&mut g));
            for axis in 0..3 {
                let h = 1e-6;
                let (mut vp, mut vm) = (v, v);
                vp[axis] += h;
                vm[axis] -= h;
                let (mut yp, mut ym) = (vec![0.0; k], vec![0.0; k]);
                eval_basis(vp, 3, &mut yp, None);
                eval_basis(vm, 3, &mut ym, None);
                for i in 0..k {
                    let fd = (yp[i] - ym[i]) / (2.0 * h);
                    assert!((fd - g[i][axis]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = random_dir(&mut rng);
        let y = sh_basis(d, 2).unwrap();
        assert_eq!(sh_project(&[0.0; 9], &y).unwrap(), 0.0);
        let mut e0 = [0.0; 9];
        e0[0] = 1.0;
        assert!((sh_project(&e0, &y).unwrap() - C0).abs() < 1e-15);
        let c: Vec<f64> = (0..9).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut acc = 0.0;
        for i in 0..9 {
            acc += c[i] * y[i];
        }
        assert!((sh_project(&c, &y).unwrap() - acc).abs() < 1e-12);
        assert!(sh_project(&c[..4], &y).is_err());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Direction::new([1.0, 1e-3, 0.0]).is_err());
        assert!(Direction::new([1.0, 0.0, 0.0]).is_ok());
        let d = Direction::new([1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(sh_basis(d, 4), Err(Error::UnsupportedDegree(4))));
    }

    #[test]
    fn degree_zero_projection_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = [0.7];
        let first = sh_project(&c, &sh_basis(random_dir(&mut rng), 0).unwrap()).unwrap();
        for _ in 0..10 {
            let v = sh_project(&c, &sh_basis(random_dir(&mut rng), 0).unwrap()).unwrap();
            assert_eq!(v, first);
        }
    }
}
