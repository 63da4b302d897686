//! Pinhole intrinsics and rigid poses.
//!
//! Camera frame: right-handed, x right, y down, looking along +z. Pixel
//! `(0, 0)` is the center of the top-left pixel, so a pixel `(u, v)` with
//! depth `s` back-projects to `((u - cx) s / f, (v - cy) s / f, s)`.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Pinhole camera with square pixels: `K = [f 0 cx; 0 f cy; 0 0 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    f: f64,
    cx: f64,
    cy: f64,
}

impl CameraIntrinsics {
    pub fn new(f: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(f.is_finite() && f > 0.0) {
            return Err(Error::invalid(format!("focal length must be positive and finite, got {f}")));
        }
        if !cx.is_finite() || !cy.is_finite() {
            return Err(Error::invalid("principal point must be finite"));
        }
        Ok(Self { f, cx, cy })
    }

    /// Intrinsics with the principal point at the center of a `width x height` grid.
    pub fn centered(f: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(f, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
    }

    pub fn f(&self) -> f64 {
        self.f
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    /// Intrinsics for an image resampled by `factor`: `(f, cx, cy) * factor`.
    pub fn scale(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::invalid(format!("scale factor must be positive, got {factor}")));
        }
        Self::new(self.f * factor, self.cx * factor, self.cy * factor)
    }

    /// Back-projects pixel `(u, v)` at depth `s` into the camera frame.
    #[inline]
    pub fn unproject(&self, u: f64, v: f64, s: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) * s / self.f, (v - self.cy) * s / self.f, s)
    }

    /// Projects a camera-frame point; returns `(u, v, depth)`.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64, f64) {
        (self.f * p.x / p.z + self.cx, self.f * p.y / p.z + self.cy, p.z)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.f, 0.0, self.cx, 0.0, self.f, self.cy, 0.0, 0.0, 1.0)
    }
}

/// Rigid transform `p -> R p + T`.
///
/// When used as a relative warp pose it maps source-camera coordinates into
/// target-camera coordinates. Scene camera placements use it as
/// camera-to-world.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("pose contains non-finite entries"));
        }
        let gram_err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if gram_err > ORTHONORMAL_TOL {
            return Err(Error::invalid(format!("rotation is not orthonormal (|RᵀR - I| = {gram_err:e})")));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::invalid(format!("rotation determinant is {det}, expected 1")));
        }
        Ok(Self { rotation, translation })
    }

    /// Builds a pose from 12 numbers: R row-major followed by T.
    pub fn from_row_major(values: &[f64; 12]) -> Result<Self> {
        let r = Matrix3::from_row_slice(&values[..9]);
        let t = Vector3::new(values[9], values[10], values[11]);
        Self::new(r, t)
    }

    /// Inverse of [`Pose::from_row_major`].
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)],
            r[(1, 0)], r[(1, 1)], r[(1, 2)],
            r[(2, 0)], r[(2, 1)], r[(2, 2)],
            t.x, t.y, t.z,
        ]
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(tx: f64, ty: f64, tz: f64) -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::new(tx, ty, tz) }
    }

    /// Rotation by `yaw` radians about the camera's vertical (y) axis,
    /// followed by translation `(tx, ty, tz)`.
    pub fn from_yaw_translation(yaw: f64, tx: f64, ty: f64, tz: f64) -> Self {
        let rotation = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw).into_inner();
        Self { rotation, translation: Vector3::new(tx, ty, tz) }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// The pose applying `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Largest absolute entry-wise difference to `other`.
    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        let dr = (self.rotation - other.rotation).abs().max();
        let dt = (self.translation - other.translation).abs().max();
        dr.max(dt)
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == Matrix3::identity() && self.translation == Vector3::zeros()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 320.0, 240.0).unwrap()
    }

    #[test]
    fn scale_by_two_doubles_everything() {
        let s = k().scale(2.0).unwrap();
        assert_eq!((s.f(), s.cx(), s.cy()), (1000.0, 640.0, 480.0));
    }

    #[test]
    fn scale_by_one_is_identity() {
        assert_eq!(k().scale(1.0).unwrap(), k());
    }

    #[test]
    fn scale_by_half() {
        let s = k().scale(0.5).unwrap();
        assert_eq!((s.f(), s.cx(), s.cy()), (250.0, 160.0, 120.0));
    }

    #[test]
    fn non_positive_scale_is_rejected() {
        assert!(matches!(k().scale(0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(k().scale(-2.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn invalid_intrinsics_are_rejected() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0).is_err());
        assert!(CameraIntrinsics::new(1.0, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn invalid_rotations_are_rejected() {
        let scaled = Matrix3::identity() * 2.0;
        assert!(Pose::new(scaled, Vector3::zeros()).is_err());
        let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(Pose::new(reflection, Vector3::zeros()).is_err());
    }

    #[test]
    fn translations_compose_additively() {
        let a = Pose::from_translation(0.0, 0.0, 1.0);
        let b = Pose::from_translation(0.0, 0.0, 2.0);
        assert_eq!(a.compose(&b), Pose::from_translation(0.0, 0.0, 3.0));
    }

    #[test]
    fn inverse_of_identity_and_translation() {
        assert_eq!(Pose::identity().inverse(), Pose::identity());
        let inv = Pose::from_translation(1.0, 0.0, 0.0).inverse();
        assert_eq!(inv.translation(), &Vector3::new(-1.0, 0.0, 0.0));
    }

    #[test]
    fn row_major_roundtrip() {
        let p = Pose::from_yaw_translation(0.3, 1.0, -2.0, 0.5);
        assert_eq!(Pose::from_row_major(&p.to_row_major()).unwrap(), p);
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            -3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0,
            -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, 0.0f64..std::f64::consts::PI,
        )
            .prop_filter_map("degenerate axis", |(tx, ty, tz, ax, ay, az, angle)| {
                let axis = Vector3::new(ax, ay, az);
                (axis.norm() > 1e-3).then(|| {
                    let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
                    Pose::new(r.into_inner(), Vector3::new(tx, ty, tz)).unwrap()
                })
            })
    }

    proptest! {
        #[test]
        fn compose_is_associative(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let lhs = a.compose(&b).compose(&c);
            let rhs = a.compose(&b.compose(&c));
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-9);
        }

        #[test]
        fn identity_is_neutral(p in arb_pose()) {
            prop_assert!(Pose::identity().compose(&p).max_abs_diff(&p) < 1e-12);
            prop_assert!(p.compose(&Pose::identity()).max_abs_diff(&p) < 1e-12);
        }

        #[test]
        fn compose_with_inverse_is_identity(p in arb_pose()) {
            prop_assert!(p.compose(&p.inverse()).max_abs_diff(&Pose::identity()) < 1e-9);
            prop_assert!(p.inverse().compose(&p).max_abs_diff(&Pose::identity()) < 1e-9);
        }

        #[test]
        fn inverse_is_an_involution(p in arb_pose()) {
            prop_assert!(p.inverse().inverse().max_abs_diff(&p) < 1e-12);
        }

        #[test]
        fn scaling_composes_multiplicatively(a in 0.1f64..8.0, b in 0.1f64..8.0) {
            let kk = k();
            let twice = kk.scale(a).unwrap().scale(b).unwrap();
            let once = kk.scale(a * b).unwrap();
            prop_assert!((twice.f() - once.f()).abs() < 1e-9);
            prop_assert!((twice.cx() - once.cx()).abs() < 1e-9);
            prop_assert!((twice.cy() - once.cy()).abs() < 1e-9);
        }
    }
}
