use nalgebra::{Matrix3, Vector3};

use crate::error::{LatoError, Result};
use crate::landmarks::{interocular_distance, Canvas, LandmarkSet, NUM_LANDMARKS};

use super::pose::{fit_pose, head_rotation};
use super::template::{template_interocular, CanonicalFace3D, Point3};

/// Largest per-call rotation accepted by [`apply_rigid_rotation`].
pub const MAX_STEP_DEGREES: f64 = 60.0;

/// Depth of the neck pivot behind the face centroid, in template pixels.
pub const NECK_PIVOT_DEPTH: f64 = 100.0;

/// A 2D face with per-point depth borrowed from the pose-aligned template.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedFace {
    points: [Point3; NUM_LANDMARKS],
    canvas: Canvas,
}

impl LiftedFace {
    pub fn points(&self) -> &[Point3; NUM_LANDMARKS] {
        &self.points
    }

    pub fn centroid(&self) -> Point3 {
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k] / NUM_LANDMARKS as f64;
            }
        }
        c
    }

    /// Rotates by `Rx(dpitch) * Ry(dyaw)` about a pivot `pivot_depth`
    /// pixels behind the 3D centroid. A zero depth leaves the centroid fixed.
    pub fn rotated(&self, dyaw: f64, dpitch: f64, pivot_depth: f64) -> LiftedFace {
        let r = head_rotation(dpitch, dyaw);
        self.transformed(&r, pivot_depth)
    }

    fn transformed(&self, r: &Matrix3<f64>, pivot_depth: f64) -> LiftedFace {
        let c = self.centroid();
        let pivot = Vector3::new(c[0], c[1], c[2] - pivot_depth);
        let points = self.points.map(|p| {
            let q = r * (Vector3::new(p[0], p[1], p[2]) - pivot) + pivot;
            [q.x, q.y, q.z]
        });
        LiftedFace {
            points,
            canvas: self.canvas,
        }
    }

    /// Orthographic projection, unclamped.
    pub fn project(&self) -> Result<LandmarkSet> {
        LandmarkSet::new(self.points.map(|p| [p[0], p[1]]), self.canvas)
    }
}

/// Gives each point of `f` the depth of the corresponding template point
/// after aligning the template to `f`'s estimated pose and scale.
pub fn lift(f: &LandmarkSet) -> Result<LiftedFace> {
    let template = CanonicalFace3D::builtin();
    let fit = fit_pose(f, template)?;
    let tc = template.centroid();
    let mut points = [[0.0; 3]; NUM_LANDMARKS];
    for (i, out) in points.iter_mut().enumerate() {
        let t = template.points()[i];
        let v = Vector3::new(t[0] - tc[0], t[1] - tc[1], t[2] - tc[2]);
        let z = fit.scale * (fit.rotation * v).z;
        let p = f.point(i);
        *out = [p[0], p[1], z];
    }
    Ok(LiftedFace {
        points,
        canvas: f.canvas(),
    })
}

fn check_angles(dyaw: f64, dpitch: f64) -> Result<()> {
    for (name, v) in [("yaw", dyaw), ("pitch", dpitch)] {
        if !v.is_finite() || v.abs() > MAX_STEP_DEGREES {
            return Err(LatoError::Range(format!(
                "{name} step of {v} degrees exceeds {MAX_STEP_DEGREES}"
            )));
        }
    }
    Ok(())
}

/// Rigid head rotation about the face's own 3D centroid; the 2D centroid is
/// preserved (before clamping).
pub fn apply_rigid_rotation(f: &LandmarkSet, dyaw: f64, dpitch: f64) -> Result<LandmarkSet> {
    rotate_about_pivot(f, dyaw, dpitch, 0.0)
}

/// Rigid head rotation about a neck pivot [`NECK_PIVOT_DEPTH`] template
/// pixels (scaled to the face) behind the centroid, so the whole face
/// swings toward the turn direction.
pub fn apply_head_turn(f: &LandmarkSet, dyaw: f64, dpitch: f64) -> Result<LandmarkSet> {
    let depth = NECK_PIVOT_DEPTH * interocular_distance(f)? / template_interocular();
    rotate_about_pivot(f, dyaw, dpitch, depth)
}

pub fn rotate_about_pivot(
    f: &LandmarkSet,
    dyaw: f64,
    dpitch: f64,
    pivot_depth: f64,
) -> Result<LandmarkSet> {
    check_angles(dyaw, dpitch)?;
    if dyaw == 0.0 && dpitch == 0.0 {
        return Ok(f.clamp());
    }
    let lifted = lift(f)?;
    Ok(lifted.rotated(dyaw, dpitch, pivot_depth).project()?.clamp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::pose::estimate_pose;
    use crate::kinematics::template::template_2d;
    use crate::landmarks::region;

    #[test]
    fn zero_rotation_is_identity() {
        let f = template_2d();
        assert_eq!(&apply_rigid_rotation(f, 0.0, 0.0).unwrap(), f);
    }

    #[test]
    fn angle_bound_is_enforced() {
        assert!(matches!(
            apply_rigid_rotation(template_2d(), 61.0, 0.0),
            Err(LatoError::Range(_))
        ));
    }

    #[test]
    fn lifted_round_trip_is_exact() {
        let lifted = lift(template_2d()).unwrap();
        let back = lifted.rotated(30.0, 0.0, 0.0).rotated(-30.0, 0.0, 0.0);
        for (a, b) in back.points().iter().zip(lifted.points()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn turning_right_moves_nose_tip_more_than_root() {
        let f = template_2d();
        let g = apply_rigid_rotation(f, -30.0, 0.0).unwrap();
        let dx = |i: usize| g.point(i)[0] - f.point(i)[0];
        assert!(dx(region::NOSE_TIP) > dx(27));
        assert!(dx(region::NOSE_TIP) > 0.0);
    }

    #[test]
    fn centroid_is_preserved() {
        let f = template_2d();
        let g = apply_rigid_rotation(f, 20.0, -15.0).unwrap();
        let (a, b) = (f.centroid(), g.centroid());
        assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
    }

    #[test]
    fn head_turn_swings_face_toward_the_turn() {
        let f = template_2d();
        let g = apply_head_turn(f, -30.0, 30.0).unwrap();
        assert!(g.centroid()[0] > f.centroid()[0] + 40.0);
        assert!(g.centroid()[1] < f.centroid()[1] - 30.0);
        let pose = estimate_pose(&g).unwrap();
        assert!((pose.yaw + 30.0).abs() < 1e-6 && (pose.pitch - 30.0).abs() < 1e-6);
    }
}
