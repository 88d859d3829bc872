//! Head pose from 2D landmarks.
//!
//! Rotations use `R = Rx(pitch) * Ry(yaw) * Rz(roll)` acting on
//! `(x right, y down, z toward the camera)` coordinates, with the yaw
//! rotation oriented so that positive yaw moves the nose toward image-left
//! and positive pitch moves it up. Projection is orthographic, so only the
//! first two rows of `R` are observable.

use nalgebra::{Matrix2x3, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{LatoError, Result};
use crate::landmarks::{LandmarkSet, NUM_LANDMARKS};

use super::template::CanonicalFace3D;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HeadPose {
    /// Degrees, up positive.
    pub pitch: f64,
    /// Degrees, left positive.
    pub yaw: f64,
}

impl HeadPose {
    pub fn new(pitch: f64, yaw: f64) -> Self {
        HeadPose { pitch, yaw }
    }
}

impl std::ops::Sub for HeadPose {
    type Output = HeadPose;

    fn sub(self, rhs: HeadPose) -> HeadPose {
        HeadPose::new(self.pitch - rhs.pitch, self.yaw - rhs.yaw)
    }
}

/// Root of the summed squared pitch and yaw differences, in degrees.
pub fn pose_deviation(est: HeadPose, target: HeadPose) -> f64 {
    (est.pitch - target.pitch).hypot(est.yaw - target.yaw)
}

pub fn rot_x(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(c, 0.0, -s, 0.0, 1.0, 0.0, s, 0.0, c)
}

pub fn rot_z(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// `Rx(pitch) * Ry(yaw)`, roll fixed at zero.
pub fn head_rotation(pitch: f64, yaw: f64) -> Matrix3<f64> {
    rot_x(pitch) * rot_y(yaw)
}

/// Pitch and yaw of a rotation in the `Rx * Ry * Rz` convention.
pub fn euler_pitch_yaw(r: &Matrix3<f64>) -> HeadPose {
    let yaw = (-r[(0, 2)]).clamp(-1.0, 1.0).asin().to_degrees();
    let pitch = (-r[(1, 2)]).atan2(r[(2, 2)]).to_degrees();
    HeadPose::new(pitch, yaw)
}

/// Result of fitting the template to a 2D face.
#[derive(Clone, Debug)]
pub struct PoseFit {
    pub rotation: Matrix3<f64>,
    /// Pixels of the observed face per template pixel.
    pub scale: f64,
    pub pose: HeadPose,
}

/// Weak-perspective fit: least-squares 2x3 projection from the centred
/// template to the centred observation, nearest orthonormal rows, third row
/// by cross product.
pub fn fit_pose(f: &LandmarkSet, template: &CanonicalFace3D) -> Result<PoseFit> {
    let tc = template.centroid();
    let oc = f.centroid();
    let mut a = Matrix3::<f64>::zeros();
    let mut b = Matrix2x3::<f64>::zeros();
    for i in 0..NUM_LANDMARKS {
        let t = template.points()[i];
        let x = Vector3::new(t[0] - tc[0], t[1] - tc[1], t[2] - tc[2]);
        let p = f.point(i);
        let y = nalgebra::Vector2::new(p[0] - oc[0], p[1] - oc[1]);
        a += x * x.transpose();
        b += y * x.transpose();
    }
    let a_inv = a
        .try_inverse()
        .ok_or_else(|| LatoError::DegenerateGeometry("template is planar".into()))?;
    let m = b * a_inv;
    let svd = m.svd(true, true);
    let (s1, s2) = (svd.singular_values[0].max(svd.singular_values[1]), svd.singular_values[0].min(svd.singular_values[1]));
    if s1.is_nan() || s1 <= 1e-9 || s2 < 1e-3 * s1 {
        return Err(LatoError::DegenerateGeometry(format!(
            "projection fit is rank deficient (singular values {s1:.3e}, {s2:.3e})"
        )));
    }
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let rows = u * v_t;
    let r1 = Vector3::new(rows[(0, 0)], rows[(0, 1)], rows[(0, 2)]);
    let r2 = Vector3::new(rows[(1, 0)], rows[(1, 1)], rows[(1, 2)]);
    let r3 = r1.cross(&r2);
    let rotation = Matrix3::from_rows(&[r1.transpose(), r2.transpose(), r3.transpose()]);
    Ok(PoseFit {
        pose: euler_pitch_yaw(&rotation),
        rotation,
        scale: (s1 + s2) / 2.0,
    })
}

/// Pitch and yaw of `f` relative to the built-in template.
pub fn estimate_pose(f: &LandmarkSet) -> Result<HeadPose> {
    Ok(fit_pose(f, CanonicalFace3D::builtin())?.pose)
}
