//! Rigid-body math, the pinhole camera model and back-projection.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::grid::{DepthMap, Mask};

/// Twist `[ω; v]`: rotation vector (radians) followed by translation part (meters).
pub type Twist = Vector6<f64>;

/// Rotation norms at or above this use the quaternion branch of [`se3_log`].
const LOG_QUATERNION_BRANCH: f64 = PI - 1e-3;

/// Rigid transform `x ↦ R·x + t`. Camera poses map camera coordinates to world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    /// Rotation about a unit (or any non-zero) axis followed by a translation.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, t: Vector3<f64>) -> Self {
        let w = axis.normalize() * angle;
        Self::new(so3_exp(&w), t)
    }

    /// Builds a pose from a (not necessarily normalized) quaternion.
    pub fn from_quaternion(qx: f64, qy: f64, qz: f64, qw: f64, t: Vector3<f64>) -> Self {
        let q = UnitQuaternion::from_quaternion(Quaternion::new(qw, qx, qy, qz));
        Self::new(*q.to_rotation_matrix().matrix(), t)
    }

    /// Unit quaternion `(qx, qy, qz, qw)` with `qw ≥ 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        let rot = Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let (mut x, mut y, mut z, mut w) = (q.i, q.j, q.k, q.w);
        if w < 0.0 {
            x = -x;
            y = -y;
            z = -z;
            w = -w;
        }
        let n = (x * x + y * y + z * z + w * w).sqrt();
        [x / n, y / n, z / n, w / n]
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt * self.translation))
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Left-multiplicative update `exp(Δ) ∘ self`.
    pub fn left_update(&self, delta: &Twist) -> Pose {
        se3_exp(delta).compose(self)
    }

    /// Rotation angle of `self⁻¹ ∘ other`, radians.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        let r = self.rotation.transpose() * other.rotation;
        ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    pub fn translation_distance_to(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Largest absolute entry difference over the 12 pose parameters.
    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        let r = (self.rotation - other.rotation).abs().max();
        let t = (self.translation - other.translation).abs().max();
        r.max(t)
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().all(|v| v.is_finite()) && self.translation.iter().all(|v| v.is_finite())
    }

    /// Row-major rotation followed by translation.
    pub fn to_array12(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 3 + c] = self.rotation[(r, c)];
            }
            out[9 + r] = self.translation[r];
        }
        out
    }

    pub fn from_array12(a: &[f64; 12]) -> Pose {
        let rotation = Matrix3::from_row_slice(&a[..9]);
        Pose::new(rotation, Vector3::new(a[9], a[10], a[11]))
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;

    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

#[inline]
pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Coefficients `sinθ/θ`, `(1−cosθ)/θ²`, `(θ−sinθ)/θ³`.
fn exp_coefficients(theta: f64) -> (f64, f64, f64) {
    if theta < 1e-3 {
        let t2 = theta * theta;
        (
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t2 = theta * theta;
        (s / theta, (1.0 - c) / t2, (theta - s) / (t2 * theta))
    }
}

pub fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let (a, b, _) = exp_coefficients(theta);
    let k = skew(w);
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation vector of a rotation matrix, norm in `[0, π]`.
pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = cos.acos();
    if theta >= LOG_QUATERNION_BRANCH {
        let rot = Rotation3::from_matrix_unchecked(*r);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let (mut v, mut w) = (q.imag(), q.w);
        if w < 0.0 {
            v = -v;
            w = -w;
        }
        let vn = v.norm();
        if vn == 0.0 {
            return Vector3::zeros();
        }
        let angle = 2.0 * vn.atan2(w);
        return v * (angle / vn);
    }
    let vee = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let factor = if theta < 1e-4 {
        0.5 * (1.0 + theta * theta / 6.0)
    } else {
        theta / (2.0 * theta.sin())
    };
    vee * factor
}

/// Closed-form SE(3) exponential.
pub fn se3_exp(twist: &Twist) -> Pose {
    let w = Vector3::new(twist[0], twist[1], twist[2]);
    let v = Vector3::new(twist[3], twist[4], twist[5]);
    let theta = w.norm();
    let (a, b, c) = exp_coefficients(theta);
    let k = skew(&w);
    let k2 = k * k;
    let rotation = Matrix3::identity() + k * a + k2 * b;
    let left_jacobian = Matrix3::identity() + k * b + k2 * c;
    Pose::new(rotation, left_jacobian * v)
}

/// SE(3) logarithm, inverse of [`se3_exp`] for rotation norms below π.
pub fn se3_log(pose: &Pose) -> Twist {
    let w = so3_log(&pose.rotation);
    let theta = w.norm();
    let k = skew(&w);
    // Coefficient of K² in the inverse left Jacobian.
    let c = if theta < 1e-2 {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half / half.tan()) / (theta * theta)
    };
    let v_inv = Matrix3::identity() - k * 0.5 + k * k * c;
    let v = v_inv * pose.translation;
    Twist::new(w.x, w.y, w.z, v.x, v.y, v.z)
}

/// Pinhole intrinsics of a rectified camera. Pixel `(u, v)` has its center at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Raw depth units per meter.
    pub depth_scale: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            depth_scale: 5000.0,
        }
    }

    /// Centered camera with the given horizontal field of view (radians) and square pixels.
    pub fn from_fov(width: usize, height: usize, hfov: f64) -> Self {
        let f = 0.5 * width as f64 / (0.5 * hfov).tan();
        Self::new(f, f, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64
            && self.depth_scale > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid intrinsics {self:?}")))
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Intrinsics after block-downsampling by an integer factor.
    pub fn downscaled(&self, factor: usize) -> Intrinsics {
        let s = factor as f64;
        Intrinsics {
            fx: self.fx / s,
            fy: self.fy / s,
            cx: (self.cx + 0.5) / s - 0.5,
            cy: (self.cy + 0.5) / s - 0.5,
            width: self.width / factor,
            height: self.height / factor,
            depth_scale: self.depth_scale,
        }
    }

    /// Viewing ray through pixel `(u, v)` scaled to unit z.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Camera-frame point at pixel `(u, v)` with z-depth `d`.
    #[inline]
    pub fn unproject(&self, u: f64, v: f64, d: f64) -> Vector3<f64> {
        self.ray(u, v) * d
    }

    /// Pixel coordinates and depth of a camera-frame point; `None` behind the camera.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy, p.z))
    }
}

/// World points of all masked pixels with positive depth, row-major.
pub fn backproject(
    depth: &DepthMap,
    mask: &Mask,
    k: &Intrinsics,
    pose: &Pose,
) -> Result<Vec<Vector3<f64>>> {
    check_shape(depth.width(), depth.height(), k)?;
    check_shape(mask.width(), mask.height(), k)?;
    let mut out = Vec::with_capacity(mask.count_true());
    for v in 0..k.height {
        for u in 0..k.width {
            let d = depth[(u, v)];
            if mask[(u, v)] && d > 0.0 && d.is_finite() {
                out.push(pose.transform_point(&k.unproject(u as f64, v as f64, d)));
            }
        }
    }
    Ok(out)
}

pub(crate) fn check_shape(width: usize, height: usize, k: &Intrinsics) -> Result<()> {
    if width != k.width || height != k.height {
        return Err(Error::InvalidInput(format!(
            "image is {width}x{height} but intrinsics expect {}x{}",
            k.width, k.height
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn twist(a: [f64; 6]) -> Twist {
        Twist::from_row_slice(&a)
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let p = se3_exp(&Twist::zeros());
        assert_eq!(p.max_abs_diff(&Pose::identity()), 0.0);
    }

    #[test]
    fn exp_quarter_turn_about_z() {
        let p = se3_exp(&twist([0.0, 0.0, PI / 2.0, 0.0, 0.0, 0.0]));
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((p.rotation - expected).abs().max() < 1e-15);
        assert!(p.translation.norm() < 1e-15);
    }

    #[test]
    fn log_exp_round_trip() {
        let t = twist([0.1, -0.2, 0.3, 1.0, 2.0, 3.0]);
        let back = se3_log(&se3_exp(&t));
        assert!((back - t).abs().max() < 1e-10, "{back:?}");
    }

    #[test]
    fn log_near_pi_uses_stable_branch() {
        let axis = Vector3::new(1.0, 2.0, -0.5).normalize();
        for theta in [PI - 1e-3, PI - 1e-5, PI - 1e-8] {
            let w = axis * theta;
            let t = twist([w.x, w.y, w.z, 0.3, -0.1, 0.7]);
            let back = se3_log(&se3_exp(&t));
            assert!((back - t).abs().max() < 1e-7, "theta {theta}: {back:?}");
        }
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let p = se3_exp(&twist([0.4, -0.1, 0.9, 0.2, 0.5, -1.0]));
        assert!(p.compose(&p.inverse()).max_abs_diff(&Pose::identity()) < 1e-12);
        assert!(p.inverse().compose(&p).max_abs_diff(&Pose::identity()) < 1e-12);
    }

    #[test]
    fn quaternion_round_trip() {
        let p = se3_exp(&twist([-0.7, 0.2, 2.5, 0.0, 1.0, 0.0]));
        let [x, y, z, w] = p.quaternion();
        assert!(w >= 0.0);
        let q = Pose::from_quaternion(x, y, z, w, p.translation);
        assert!(q.max_abs_diff(&p) < 1e-14);
    }

    fn intrinsics() -> Intrinsics {
        Intrinsics::new(500.0, 480.0, 319.5, 239.5, 640, 480)
    }

    #[test]
    fn principal_point_ray() {
        let k = intrinsics();
        let mut depth = DepthMap::filled(640, 480, 0.0);
        let mut mask = Mask::filled(640, 480, false);
        // cx, cy are half-integers here, so use a camera with integer principal point.
        let k = Intrinsics { cx: 320.0, cy: 240.0, ..k };
        depth[(320, 240)] = 2.0;
        mask[(320, 240)] = true;
        let pts = backproject(&depth, &mask, &k, &Pose::identity()).unwrap();
        assert_eq!(pts, vec![Vector3::new(0.0, 0.0, 2.0)]);
    }

    #[test]
    fn unit_tangent_pixel() {
        let k = Intrinsics::new(100.0, 100.0, 10.0, 10.0, 200, 20);
        let mut depth = DepthMap::filled(200, 20, 0.0);
        let mut mask = Mask::filled(200, 20, false);
        depth[(110, 10)] = 1.0;
        mask[(110, 10)] = true;
        let pts = backproject(&depth, &mask, &k, &Pose::identity()).unwrap();
        assert!((pts[0] - Vector3::new(1.0, 0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn translation_only_pose_shifts_points() {
        let k = intrinsics();
        let depth = DepthMap::from_fn(640, 480, |u, v| 1.0 + (u + v) as f64 * 1e-3);
        let mut mask = Mask::filled(640, 480, false);
        mask[(3, 7)] = true;
        mask[(600, 400)] = true;
        let t = Vector3::new(0.3, -2.0, 5.0);
        let a = backproject(&depth, &mask, &k, &Pose::identity()).unwrap();
        let b = backproject(&depth, &mask, &k, &Pose::from_translation(t)).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            assert!((pb - pa - t).norm() < 1e-12);
        }
    }

    #[test]
    fn masked_non_positive_depth_is_excluded() {
        let k = Intrinsics::new(10.0, 10.0, 1.0, 1.0, 3, 3);
        let depth = DepthMap::from_vec(3, 3, vec![1.0, 0.0, -1.0, 2.0, 2.0, 2.0, 0.0, 0.0, 3.0]);
        let mask = Mask::filled(3, 3, true);
        let pts = backproject(&depth, &mask, &k, &Pose::identity()).unwrap();
        assert_eq!(pts.len(), 5);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let k = Intrinsics::new(10.0, 10.0, 1.0, 1.0, 3, 3);
        let depth = DepthMap::filled(4, 3, 1.0);
        let mask = Mask::filled(4, 3, true);
        assert!(backproject(&depth, &mask, &k, &Pose::identity()).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(intrinsics().validate().is_ok());
        assert!(Intrinsics { fx: 0.0, ..intrinsics() }.validate().is_err());
        assert!(Intrinsics { cx: 640.0, ..intrinsics() }.validate().is_err());
        assert!(Intrinsics { depth_scale: 0.0, ..intrinsics() }.validate().is_err());
    }

    #[test]
    fn backproject_then_project_recovers_pixel() {
        let k = Intrinsics::new(525.0, 525.0, 319.5, 239.5, 640, 480);
        let pose = se3_exp(&twist([0.1, 0.2, -0.3, 0.5, -0.2, 0.1]));
        let depth = DepthMap::from_fn(640, 480, |u, v| 0.5 + ((u * 7 + v * 3) % 50) as f64 * 0.1);
        let mut mask = Mask::filled(640, 480, false);
        let pixels = [(0usize, 0usize), (639, 479), (100, 300), (320, 17)];
        for &(u, v) in &pixels {
            mask[(u, v)] = true;
        }
        let pts = backproject(&depth, &mask, &k, &pose).unwrap();
        let mut sorted = pixels.to_vec();
        sorted.sort_by_key(|&(u, v)| (v, u));
        for (p, &(u, v)) in pts.iter().zip(&sorted) {
            let (pu, pv, _) = k.project(&pose.inverse().transform_point(p)).unwrap();
            assert!((pu - u as f64).abs() < 1e-6 && (pv - v as f64).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn exp_log_are_inverse(
            dir in prop::array::uniform3(-1.0f64..1.0),
            angle in 0.0f64..(PI - 1e-3),
            v in prop::array::uniform3(-5.0f64..5.0),
        ) {
            let d = Vector3::from(dir);
            prop_assume!(d.norm() > 1e-3);
            let w = d.normalize() * angle;
            let t = twist([w.x, w.y, w.z, v[0], v[1], v[2]]);
            let p = se3_exp(&t);
            let rtr = p.rotation.transpose() * p.rotation;
            prop_assert!((rtr - Matrix3::identity()).abs().max() < 1e-9);
            prop_assert!((p.rotation.determinant() - 1.0).abs() < 1e-9);
            let back = se3_log(&p);
            prop_assert!((back - t).abs().max() < 1e-9, "{:?} vs {:?}", back, t);
        }
    }
}
