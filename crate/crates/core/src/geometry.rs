//! Listener poses and the small amount of 3-vector math the renderer needs.
//!
//! Listener frame: +x toward the right ear, +y up, -z the facing direction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Unit quaternion `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Self = Self {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_array(q: [f64; 4]) -> Self {
        Self {
            w: q[0],
            x: q[1],
            y: q[2],
            z: q[3],
        }
    }

    /// Row-major rotation matrix; columns are the rotated basis vectors.
    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let Self { w, x, y, z } = *self;
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    /// Inverse of [`Self::to_matrix`] for a proper rotation matrix.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Self {
        let trace = m[0][0] + m[1][1] + m[2][2];
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Self {
                w: 0.25 * s,
                x: (m[2][1] - m[1][2]) / s,
                y: (m[0][2] - m[2][0]) / s,
                z: (m[1][0] - m[0][1]) / s,
            }
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            Self {
                w: (m[2][1] - m[1][2]) / s,
                x: 0.25 * s,
                y: (m[0][1] + m[1][0]) / s,
                z: (m[0][2] + m[2][0]) / s,
            }
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            Self {
                w: (m[0][2] - m[2][0]) / s,
                x: (m[0][1] + m[1][0]) / s,
                y: 0.25 * s,
                z: (m[1][2] + m[2][1]) / s,
            }
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            Self {
                w: (m[1][0] - m[0][1]) / s,
                x: (m[0][2] + m[2][0]) / s,
                y: (m[1][2] + m[2][1]) / s,
                z: 0.25 * s,
            }
        };
        let n = q.norm();
        Self {
            w: q.w / n,
            x: q.x / n,
            y: q.y / n,
            z: q.z / n,
        }
    }
}

/// Listener position (metres) and orientation mapping listener-frame vectors
/// to world vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ListenerPose {
    position: Vec3,
    orientation: Quaternion,
    rot: [[f64; 3]; 3],
}

impl ListenerPose {
    pub const QUAT_TOLERANCE: f64 = 1e-9;

    /// Errors unless `|q| = 1 +- 1e-9`.
    pub fn new(position: Vec3, orientation: Quaternion) -> Result<Self> {
        let n = orientation.norm();
        if (n - 1.0).abs() > Self::QUAT_TOLERANCE || !n.is_finite() {
            return Err(Error::NonUnitQuaternion(n));
        }
        if position.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pose position"));
        }
        Ok(Self {
            position,
            orientation,
            rot: orientation.to_matrix(),
        })
    }

    /// Like [`Self::new`] but renormalizes quaternions whose norm is within
    /// `1e-4` of one, as found in text files with limited precision.
    pub fn normalized(position: Vec3, q: Quaternion) -> Result<Self> {
        let n = q.norm();
        if (n - 1.0).abs() > 1e-4 || !n.is_finite() {
            return Err(Error::NonUnitQuaternion(n));
        }
        if (n - 1.0).abs() <= Self::QUAT_TOLERANCE {
            return Self::new(position, q);
        }
        let q = Quaternion {
            w: q.w / n,
            x: q.x / n,
            y: q.y / n,
            z: q.z / n,
        };
        Self::new(position, q)
    }

    /// Listener at `position` facing `target`, with `up` as the approximate
    /// up vector.
    pub fn look_at(position: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let fwd = sub(target, position);
        let fwd_n = norm(fwd);
        if fwd_n == 0.0 {
            return Err(Error::Coincident);
        }
        let back = scale(fwd, -1.0 / fwd_n);
        let right = cross(up, back);
        let rn = norm(right);
        if rn < 1e-12 {
            return Err(Error::InvalidConfig("up vector parallel to facing".into()));
        }
        let right = scale(right, 1.0 / rn);
        let true_up = cross(back, right);
        let m = [
            [right[0], true_up[0], back[0]],
            [right[1], true_up[1], back[1]],
            [right[2], true_up[2], back[2]],
        ];
        Self::new(position, Quaternion::from_matrix(m))
    }

    pub fn position(&self) -> Vec3 {
        self.position
    }

    pub fn orientation(&self) -> Quaternion {
        self.orientation
    }

    /// Rotation matrix, listener frame to world.
    pub fn rotation(&self) -> &[[f64; 3]; 3] {
        &self.rot
    }

    /// World-space vector expressed in the listener frame (`R^T v`).
    #[inline]
    pub fn to_listener(&self, v: Vec3) -> Vec3 {
        let r = &self.rot;
        [
            r[0][0] * v[0] + r[1][0] * v[1] + r[2][0] * v[2],
            r[0][1] * v[0] + r[1][1] * v[1] + r[2][1] * v[2],
            r[0][2] * v[0] + r[1][2] * v[1] + r[2][2] * v[2],
        ]
    }

    /// Listener-frame vector in world coordinates (`R v`).
    #[inline]
    pub fn to_world(&self, v: Vec3) -> Vec3 {
        let r = &self.rot;
        [
            r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
            r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
            r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
        ]
    }

    pub fn right_axis(&self) -> Vec3 {
        self.to_world([1.0, 0.0, 0.0])
    }

    pub fn forward(&self) -> Vec3 {
        self.to_world([0.0, 0.0, -1.0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip() {
        let q = Quaternion {
            w: 0.3,
            x: -0.5,
            y: 0.7,
            z: 0.1,
        };
        let n = q.norm();
        let q = Quaternion::from_array(q.to_array().map(|v| v / n));
        let back = Quaternion::from_matrix(q.to_matrix());
        let sign = if back.w * q.w < 0.0 { -1.0 } else { 1.0 };
        for (a, b) in q.to_array().iter().zip(back.to_array()) {
            assert!((a - sign * b).abs() < 1e-12);
        }
    }

    #[test]
    fn look_at_faces_target() {
        let p = ListenerPose::look_at([2.0, 0.0, 0.0], [0.0; 3], [0.0, 1.0, 0.0]).unwrap();
        let fwd = p.forward();
        assert!((fwd[0] + 1.0).abs() < 1e-12 && fwd[1].abs() < 1e-12 && fwd[2].abs() < 1e-12);
        let u = p.to_listener(sub([0.0; 3], p.position()));
        assert!((u[2] + 2.0).abs() < 1e-12);
        // facing -x with y up puts the right ear toward -z
        let r = p.right_axis();
        assert!((r[2] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_unit_quaternion() {
        let q = Quaternion {
            w: 1.0,
            x: 2e-2,
            y: 0.0,
            z: 0.0,
        };
        assert!(ListenerPose::new([0.0; 3], q).is_err());
        assert!(ListenerPose::normalized([0.0; 3], q).is_err());
        let q = Quaternion {
            w: 1.00001,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        };
        assert!(ListenerPose::normalized([0.0; 3], q).is_ok());
    }
}
