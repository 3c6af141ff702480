//! Rigid transforms on SE(3) with quaternion storage.
//!
//! Tangent vectors are ordered `(v, omega)`: translational part first, then
//! the rotation vector. Perturbations elsewhere in the crate are applied on
//! the right, `T <- T * exp(xi)`.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

/// Below this rotation angle the closed forms switch to Taylor series.
const SMALL_ANGLE: f64 = 1e-8;

/// Logarithm is refused within this distance of a half turn.
pub const LOG_ANGLE_LIMIT: f64 = std::f64::consts::PI - 1e-6;

/// A 6-vector in the SE(3) tangent space, `(vx, vy, vz, wx, wy, wz)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist(pub Vector6<f64>);

impl Twist {
    pub fn zero() -> Self {
        Twist(Vector6::zeros())
    }

    pub fn new(v: Vector3<f64>, omega: Vector3<f64>) -> Self {
        Twist(Vector6::new(v.x, v.y, v.z, omega.x, omega.y, omega.z))
    }

    pub fn from_slice(values: &[f64; 6]) -> Self {
        Twist(Vector6::from_column_slice(values))
    }

    pub fn v(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn omega(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    /// The 4x4 matrix `[omega^, v; 0, 0]`.
    pub fn hat(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&self.omega()));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.v());
        m
    }
}

/// Cross-product matrix: `skew(a) * b == a.cross(&b)`.
pub fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// A rigid transform. Poses in this crate are world-from-camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        let mut rotation = rotation;
        rotation.renormalize();
        Pose {
            rotation,
            translation,
        }
    }

    /// Builds a pose from raw quaternion components `(qx, qy, qz, qw)`.
    /// The quaternion is normalized; a zero quaternion is rejected.
    pub fn from_components(translation: [f64; 3], quat_xyzw: [f64; 4]) -> Result<Self> {
        let [x, y, z, w] = quat_xyzw;
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::InvalidInput(format!(
                "quaternion ({x}, {y}, {z}, {w}) cannot be normalized"
            )));
        }
        Ok(Pose::new(
            UnitQuaternion::new_unchecked(q / n),
            Vector3::from(translation),
        ))
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Pose::new(UnitQuaternion::identity(), translation)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose::new(inv, -(inv * self.translation))
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.translation + self.rotation * other.translation,
        )
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Rotation angle in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        let q = self.rotation.quaternion();
        let w = q.w.abs();
        let n = q.imag().norm();
        2.0 * n.atan2(w)
    }

    pub fn exp(xi: &Twist) -> Pose {
        se3_exp(xi)
    }

    pub fn log(&self) -> Result<Twist> {
        se3_log(self)
    }

    /// `self * exp(xi)`: a right-multiplied local perturbation.
    pub fn retract(&self, xi: &Twist) -> Pose {
        self.compose(&se3_exp(xi))
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

/// Left Jacobian of SO(3), the `V` matrix in `t = V v`.
fn left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let w = skew(omega);
    let w2 = w * w;
    let (a, b) = if theta < SMALL_ANGLE {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() + w * a + w2 * b
}

fn left_jacobian_inverse(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let w = skew(omega);
    let c = if theta < 1e-4 {
        1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0
    } else {
        (1.0 - theta * theta.sin() / (2.0 * (1.0 - theta.cos()))) / theta2
    };
    Matrix3::identity() - w * 0.5 + w * w * c
}

/// Exponential map. Rodrigues for the rotation, left Jacobian for the
/// translation.
pub fn se3_exp(xi: &Twist) -> Pose {
    let omega = xi.omega();
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let (half_sin_over_theta, cos_half) = if theta < SMALL_ANGLE {
        (0.5 - theta2 / 48.0, 1.0 - theta2 / 8.0)
    } else {
        ((0.5 * theta).sin() / theta, (0.5 * theta).cos())
    };
    let imag = omega * half_sin_over_theta;
    let q = Quaternion::new(cos_half, imag.x, imag.y, imag.z);
    let rotation = UnitQuaternion::new_normalize(q);
    Pose::new(rotation, left_jacobian(&omega) * xi.v())
}

/// Logarithm map; fails within 1e-6 rad of a half turn.
pub fn se3_log(t: &Pose) -> Result<Twist> {
    let q = t.rotation.quaternion();
    // Work in the hemisphere w >= 0 so the angle lands in [0, pi].
    let (w, imag) = if q.w < 0.0 {
        (-q.w, -q.imag())
    } else {
        (q.w, q.imag())
    };
    let n = imag.norm();
    let angle = 2.0 * n.atan2(w);
    if angle >= LOG_ANGLE_LIMIT {
        return Err(Error::AngleNearPi { angle });
    }
    let scale = if n < SMALL_ANGLE {
        // 2 atan(n / w) / n
        let r = n / w;
        2.0 / w * (1.0 - r * r / 3.0)
    } else {
        angle / n
    };
    let omega = imag * scale;
    let v = left_jacobian_inverse(&omega) * t.translation;
    Ok(Twist::new(v, omega))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    /// Matrix exponential by truncated Taylor series.
    fn expm_taylor(a: &Matrix4<f64>, terms: usize) -> Matrix4<f64> {
        let mut sum = Matrix4::identity();
        let mut term = Matrix4::identity();
        for k in 1..terms {
            term = term * a / k as f64;
            sum += term;
        }
        sum
    }

    fn random_twist(rng: &mut impl Rng, scale: f64) -> Twist {
        let mut v = [0.0; 6];
        for x in v.iter_mut() {
            *x = rng.random_range(-scale..scale);
        }
        Twist::from_slice(&v)
    }

    #[test]
    fn zero_twist_is_identity() {
        let p = se3_exp(&Twist::zero());
        assert!((p.to_matrix() - Matrix4::identity()).abs().max() < 1e-15);
    }

    #[test]
    fn quarter_turn_about_x() {
        let p = se3_exp(&Twist::from_slice(&[0.0, 0.0, 0.0, FRAC_PI_2, 0.0, 0.0]));
        let expected = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert!((p.rotation_matrix() - expected).abs().max() < 1e-15);
        assert!(p.translation().norm() < 1e-15);
    }

    #[test]
    fn exp_matches_taylor_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let xi = random_twist(&mut rng, 1.5);
            let oracle = expm_taylor(&xi.hat(), 30);
            let got = se3_exp(&xi).to_matrix();
            assert!((got - oracle).abs().max() < 1e-9, "{xi:?}");
        }
    }

    #[test]
    fn small_angle_branch_is_continuous() {
        let xi = Twist::from_slice(&[0.3, -0.2, 0.1, 1e-9, -2e-9, 5e-10]);
        let oracle = expm_taylor(&xi.hat(), 30);
        assert!((se3_exp(&xi).to_matrix() - oracle).abs().max() < 1e-14);
        let back = se3_log(&se3_exp(&xi)).unwrap();
        assert!((back.0 - xi.0).norm() < 1e-14);
    }

    #[test]
    fn log_of_identity_and_translation() {
        assert_eq!(se3_log(&Pose::identity()).unwrap().0, Vector6::zeros());
        let t = Pose::from_translation(Vector3::new(1.0, 2.0, 3.0));
        let xi = se3_log(&t).unwrap();
        assert!((xi.0 - Vector6::new(1.0, 2.0, 3.0, 0.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn log_rejects_half_turn() {
        let t = se3_exp(&Twist::from_slice(&[0.0, 0.0, 0.0, 0.0, std::f64::consts::PI, 0.0]));
        assert!(matches!(se3_log(&t), Err(Error::AngleNearPi { .. })));
    }

    #[test]
    fn log_handles_negative_scalar_quaternion() {
        let xi = Twist::from_slice(&[0.1, 0.2, 0.3, 0.4, -0.5, 0.6]);
        let p = se3_exp(&xi);
        let q = p.rotation().quaternion();
        let flipped = Pose::new(
            UnitQuaternion::new_unchecked(Quaternion::new(-q.w, -q.i, -q.j, -q.k)),
            *p.translation(),
        );
        let back = se3_log(&flipped).unwrap();
        assert!((back.0 - xi.0).norm() < 1e-12);
    }

    #[test]
    fn components_reject_zero_quaternion() {
        assert!(Pose::from_components([0.0; 3], [0.0; 4]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn twist_strategy(scale: f64) -> impl Strategy<Value = Twist> {
            proptest::array::uniform6(-scale..scale).prop_map(|a| Twist::from_slice(&a))
        }

        proptest! {
            #[test]
            fn exp_log_round_trip(xi in twist_strategy(0.57)) {
                prop_assume!(xi.norm() < 1.0);
                let back = se3_log(&se3_exp(&xi)).unwrap();
                prop_assert!((back.0 - xi.0).norm() < 1e-10);
            }

            #[test]
            fn log_exp_round_trip(xi in twist_strategy(2.0)) {
                prop_assume!(xi.omega().norm() < 3.0);
                let t = se3_exp(&xi);
                let again = se3_exp(&se3_log(&t).unwrap());
                prop_assert!((again.to_matrix() - t.to_matrix()).abs().max() < 1e-10);
            }

            #[test]
            fn composition_is_associative(a in twist_strategy(2.0), b in twist_strategy(2.0), c in twist_strategy(2.0)) {
                let (a, b, c) = (se3_exp(&a), se3_exp(&b), se3_exp(&c));
                let left = (a * b) * c;
                let right = a * (b * c);
                prop_assert!((left.to_matrix() - right.to_matrix()).abs().max() < 1e-12);
                prop_assert!((left.rotation().quaternion().norm() - 1.0).abs() < 1e-12);
            }

            #[test]
            fn inverse_cancels(a in twist_strategy(3.0)) {
                let t = se3_exp(&a);
                let id = t * t.inverse();
                prop_assert!((id.to_matrix() - Matrix4::identity()).abs().max() < 1e-12);
            }
        }
    }
}
