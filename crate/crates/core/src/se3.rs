//! Rigid camera poses (world-from-camera) with quaternion rotations,
//! SE(3) exponential/logarithm maps, and the analytic Jacobian of the
//! exponential used when optimizing trajectory tangents.

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3};

/// Tangent vector of SE(3): rotation part first (`theta`), translation
/// part second (`rho`).
pub type Tangent = [f64; 6];

/// A rigid transform mapping camera coordinates to world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SE3Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl SE3Pose {
    pub fn identity() -> Self {
        SE3Pose { rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    /// Build from a (w, x, y, z) quaternion (normalized on entry) and a
    /// translation in meters.
    pub fn new(qw: f64, qx: f64, qy: f64, qz: f64, translation: Vector3<f64>) -> Self {
        let rotation = UnitQuaternion::from_quaternion(Quaternion::new(qw, qx, qy, qz));
        SE3Pose { rotation, translation }
    }

    pub fn from_parts(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        SE3Pose { rotation, translation }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        SE3Pose { rotation: UnitQuaternion::identity(), translation: Vector3::new(x, y, z) }
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        self.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    /// Quaternion components in (w, x, y, z) order.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// Composition with matrix-product semantics: `(self * other)` applies
    /// `other` first, then `self`.
    pub fn compose(&self, other: &SE3Pose) -> SE3Pose {
        SE3Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> SE3Pose {
        let rot_inv = self.rotation.inverse();
        SE3Pose { rotation: rot_inv, translation: -(rot_inv * self.translation) }
    }

    /// Map a point from camera coordinates into world coordinates.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Map a world point into camera coordinates.
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * (p - self.translation)
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// SE(3) exponential of `[theta; rho]`.
    pub fn exp(xi: &Tangent) -> SE3Pose {
        let theta = Vector3::new(xi[0], xi[1], xi[2]);
        let rho = Vector3::new(xi[3], xi[4], xi[5]);
        let rotation = UnitQuaternion::from_scaled_axis(theta);
        let translation = left_jacobian_so3(&theta) * rho;
        SE3Pose { rotation, translation }
    }

    /// SE(3) logarithm; inverse of [`SE3Pose::exp`].
    pub fn log(&self) -> Tangent {
        let theta = self.rotation.scaled_axis();
        let rho = left_jacobian_so3_inv(&theta) * self.translation;
        [theta.x, theta.y, theta.z, rho.x, rho.y, rho.z]
    }

    /// Geodesic interpolation: `exp(u * log(end * start^-1)) * start`.
    pub fn interpolate(start: &SE3Pose, end: &SE3Pose, u: f64) -> SE3Pose {
        let rel = end.compose(&start.inverse()).log();
        let scaled = [rel[0] * u, rel[1] * u, rel[2] * u, rel[3] * u, rel[4] * u, rel[5] * u];
        SE3Pose::exp(&scaled).compose(start)
    }
}

#[inline]
fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

const SMALL_ANGLE: f64 = 1e-4;

/// Rotation-coefficient pair (sin n / n, (1 - cos n) / n^2).
fn so3_coeffs(n: f64) -> (f64, f64) {
    if n < SMALL_ANGLE {
        let n2 = n * n;
        (1.0 - n2 / 6.0 + n2 * n2 / 120.0, 0.5 - n2 / 24.0 + n2 * n2 / 720.0)
    } else {
        ((n.sin()) / n, (1.0 - n.cos()) / (n * n))
    }
}

/// `(n - sin n) / n^3`, the second coefficient of the SO(3) left Jacobian.
fn v_coeff(n: f64) -> f64 {
    if n < SMALL_ANGLE {
        let n2 = n * n;
        1.0 / 6.0 - n2 / 120.0 + n2 * n2 / 5040.0
    } else {
        (n - n.sin()) / (n * n * n)
    }
}

/// SO(3) left Jacobian V(theta): `exp([theta; rho])` translates by `V rho`.
pub fn left_jacobian_so3(theta: &Vector3<f64>) -> Matrix3<f64> {
    let n = theta.norm();
    let k = hat(theta);
    let (_, a) = so3_coeffs(n);
    let b = v_coeff(n);
    Matrix3::identity() + k * a + k * k * b
}

/// Inverse of the SO(3) left Jacobian.
pub fn left_jacobian_so3_inv(theta: &Vector3<f64>) -> Matrix3<f64> {
    let n = theta.norm();
    let k = hat(theta);
    let coeff = if n < SMALL_ANGLE {
        let n2 = n * n;
        1.0 / 12.0 + n2 / 720.0 + n2 * n2 / 30240.0
    } else {
        (1.0 - n * (1.0 + n.cos()) / (2.0 * n.sin())) / (n * n)
    };
    Matrix3::identity() - k * 0.5 + k * k * coeff
}

/// Derivative of the SE(3) exponential: for each tangent direction `j`,
/// the pair `(dR/dxi_j, dt/dxi_j)` of the pose `exp(xi)` evaluated at `xi`.
pub fn exp_jacobian(xi: &Tangent) -> [(Matrix3<f64>, Vector3<f64>); 6] {
    let theta = Vector3::new(xi[0], xi[1], xi[2]);
    let rho = Vector3::new(xi[3], xi[4], xi[5]);
    let n = theta.norm();
    let k = hat(&theta);
    let k2 = k * k;
    let (s, c) = so3_coeffs(n);
    let b = v_coeff(n);
    // Derivatives of the scalar coefficients divided by n, which stay
    // finite as n -> 0.
    let (sp_n, cp_n, bp_n) = if n < SMALL_ANGLE {
        let n2 = n * n;
        (
            -1.0 / 3.0 + n2 / 30.0,
            -1.0 / 12.0 + n2 / 180.0,
            -1.0 / 60.0 + n2 / 1260.0,
        )
    } else {
        let (sn, cn) = (n.sin(), n.cos());
        (
            cn / (n * n) - sn / (n * n * n),
            sn / (n * n * n) - 2.0 * (1.0 - cn) / (n * n * n * n),
            (1.0 - cn) / (n * n * n * n) - 3.0 * (n - sn) / (n * n * n * n * n),
        )
    };
    let v = Matrix3::identity() + k * c + k2 * b;

    let mut out = [(Matrix3::zeros(), Vector3::zeros()); 6];
    for (j, slot) in out.iter_mut().enumerate() {
        if j < 3 {
            let e = hat(&Vector3::ith(j, 1.0));
            let cross = e * k + k * e;
            let dr = k * (sp_n * theta[j]) + e * s + k2 * (cp_n * theta[j]) + cross * c;
            let dv = k * (cp_n * theta[j]) + e * c + k2 * (bp_n * theta[j]) + cross * b;
            *slot = (dr, dv * rho);
        } else {
            *slot = (Matrix3::zeros(), v.column(j - 3).into());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn random_pose(rng: &mut impl Rng) -> SE3Pose {
        let axis = Vector3::new(
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
        );
        let angle = rng.random::<f64>() * 2.0;
        let t = Vector3::new(
            rng.random::<f64>() * 4.0 - 2.0,
            rng.random::<f64>() * 4.0 - 2.0,
            rng.random::<f64>() * 4.0 - 2.0,
        );
        SE3Pose::from_parts(UnitQuaternion::from_scaled_axis(axis.normalize() * angle), t)
    }

    #[test]
    fn compose_matches_matrix_product() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let got = a.compose(&b).to_matrix();
            let expected = a.to_matrix() * b.to_matrix();
            assert_abs_diff_eq!(got, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn inverse_round_trips() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let p = random_pose(&mut rng);
        let back = p.compose(&p.inverse());
        assert_abs_diff_eq!(back.translation(), Vector3::zeros(), epsilon = 1e-12);
        assert_abs_diff_eq!(back.rotation_matrix(), Matrix3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn exp_log_round_trips() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let xi: Tangent = std::array::from_fn(|_| rng.random::<f64>() * 2.0 - 1.0);
            let pose = SE3Pose::exp(&xi);
            let back = pose.log();
            for (a, b) in xi.iter().zip(&back) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
        // Near-zero tangents go through the series branch.
        let xi: Tangent = [1e-9, -2e-9, 5e-10, 0.3, -0.2, 0.1];
        let back = SE3Pose::exp(&xi).log();
        for (a, b) in xi.iter().zip(&back) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn quaternion_stays_normalized() {
        let p = SE3Pose::new(2.0, 0.0, 0.0, 0.0, Vector3::zeros());
        let q = p.quaternion_wxyz();
        let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn interpolate_pure_translation_is_arithmetic_mean() {
        let start = SE3Pose::from_translation(1.0, 2.0, 3.0);
        let end = SE3Pose::from_translation(3.0, 6.0, -1.0);
        let mid = SE3Pose::interpolate(&start, &end, 0.5);
        assert_abs_diff_eq!(mid.translation(), Vector3::new(2.0, 4.0, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn interpolate_rotation_matches_slerp() {
        let start = SE3Pose::identity();
        let end = SE3Pose::from_parts(
            UnitQuaternion::from_scaled_axis(Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2)),
            Vector3::zeros(),
        );
        let mid = SE3Pose::interpolate(&start, &end, 0.5);
        let slerped = start.rotation().slerp(&end.rotation(), 0.5);
        assert!(mid.rotation().angle_to(&slerped) < 1e-6);
        assert_abs_diff_eq!(
            mid.rotation().scaled_axis(),
            Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_4),
            epsilon = 1e-12
        );
    }

    #[test]
    fn exp_jacobian_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let h = 1e-6;
        for case in 0..10 {
            let xi: Tangent = if case == 0 {
                [0.0; 6]
            } else {
                std::array::from_fn(|_| rng.random::<f64>() * 1.5 - 0.75)
            };
            let jac = exp_jacobian(&xi);
            for j in 0..6 {
                let mut plus = xi;
                plus[j] += h;
                let mut minus = xi;
                minus[j] -= h;
                let pp = SE3Pose::exp(&plus);
                let pm = SE3Pose::exp(&minus);
                let dr_fd = (pp.rotation_matrix() - pm.rotation_matrix()) / (2.0 * h);
                let dt_fd = (pp.translation() - pm.translation()) / (2.0 * h);
                assert_abs_diff_eq!(jac[j].0, dr_fd, epsilon = 1e-6);
                assert_abs_diff_eq!(jac[j].1, dt_fd, epsilon = 1e-6);
            }
        }
    }
}
