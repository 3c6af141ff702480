use nalgebra::{Matrix2x3, Matrix3, SMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::se3::{skew, Pose};
use crate::error::{Error, Result};

/// Points closer than this to the camera plane (meters) are rejected.
pub const MIN_DEPTH: f64 = 1e-6;

pub type Matrix2x6 = SMatrix<f64, 2, 6>;

/// Pinhole intrinsics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Intrinsics { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidIntrinsics(format!(
                "fx={}, fy={}, cx={}, cy={}",
                self.fx, self.fy, self.cx, self.cy
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Normalized bearing `[(u - cx)/fx, (v - cy)/fy, 1]`.
    pub fn unproject(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) / self.fx,
            (pixel.y - self.cy) / self.fy,
            1.0,
        )
    }

    /// Divides by the third coordinate.
    pub fn project(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        )
    }

    fn projection_jacobian(&self, p: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / p.z;
        let iz2 = iz * iz;
        Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * p.x * iz2,
            0.0,
            self.fy * iz,
            -self.fy * p.y * iz2,
        )
    }
}

/// A square block of `(2r+1)^2` pixels sharing one inverse depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Patch {
    pub frame_id: usize,
    pub center: Vector2<f64>,
    pub radius: usize,
    /// Inverse depth in 1/m.
    pub inv_depth: f64,
}

impl Patch {
    pub fn new(frame_id: usize, center: Vector2<f64>, radius: usize, inv_depth: f64) -> Self {
        Patch {
            frame_id,
            center,
            radius,
            inv_depth,
        }
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn pixel_count(&self) -> usize {
        self.side() * self.side()
    }

    /// Pixel offsets `(w1, w2)`, rows outer (w2), columns inner (w1).
    pub fn offsets(&self) -> impl Iterator<Item = (i64, i64)> {
        let r = self.radius as i64;
        (-r..=r).flat_map(move |w2| (-r..=r).map(move |w1| (w1, w2)))
    }

    pub fn pixels(&self) -> impl Iterator<Item = Vector2<f64>> + '_ {
        self.offsets()
            .map(|(w1, w2)| self.center + Vector2::new(w1 as f64, w2 as f64))
    }

    pub fn center_index(&self) -> usize {
        self.pixel_count() / 2
    }
}

/// Relative transform taking camera-i coordinates to camera-j coordinates
/// for world-from-camera poses.
pub fn relative_pose(t_i: &Pose, t_j: &Pose) -> Pose {
    t_j.inverse().compose(t_i)
}

/// Relative transform in matrix form, for reprojecting many pixels
/// between the same two frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativeTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RelativeTransform {
    pub fn between(t_i: &Pose, t_j: &Pose) -> Self {
        let rel = relative_pose(t_i, t_j);
        RelativeTransform {
            rotation: rel.rotation_matrix(),
            translation: *rel.translation(),
        }
    }

    /// Maps `[b; d]` and returns the pixel and the un-normalized 3-vector
    /// `R b + t d`.
    fn transfer(&self, pixel: &Vector2<f64>, inv_depth: f64, k: &Intrinsics) -> Result<(Vector2<f64>, Vector3<f64>)> {
        let p = self.rotation * k.unproject(pixel) + self.translation * inv_depth;
        let depth = p.z / inv_depth;
        if !(depth > MIN_DEPTH) {
            return Err(Error::BehindCamera { depth });
        }
        Ok((k.project(&p), p))
    }

    pub fn reproject(&self, pixel: &Vector2<f64>, inv_depth: f64, k: &Intrinsics) -> Result<Vector2<f64>> {
        self.transfer(pixel, inv_depth, k).map(|(uv, _)| uv)
    }

    /// Reprojection with derivatives for right perturbations of both poses
    /// and the inverse depth.
    pub fn reproject_with_jacobian(
        &self,
        pixel: &Vector2<f64>,
        inv_depth: f64,
        k: &Intrinsics,
    ) -> Result<ReprojectionJacobian> {
        let (coords, p) = self.transfer(pixel, inv_depth, k)?;
        let bearing = k.unproject(pixel);
        let r = &self.rotation;
        let proj = k.projection_jacobian(&p);

        // p = R b + t d.
        // T_j <- T_j exp(xi): p' = p - omega x p - v d
        let mut dp_j = SMatrix::<f64, 3, 6>::zeros();
        dp_j.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(Matrix3::identity() * -inv_depth));
        dp_j.fixed_view_mut::<3, 3>(0, 3).copy_from(&skew(&p));
        // T_i <- T_i exp(xi): p' = R (b + omega x b + v d) + t d
        let mut dp_i = SMatrix::<f64, 3, 6>::zeros();
        dp_i.fixed_view_mut::<3, 3>(0, 0).copy_from(&(r * inv_depth));
        dp_i.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(-r * skew(&bearing)));

        Ok(ReprojectionJacobian {
            coords,
            d_pose_i: proj * dp_i,
            d_pose_j: proj * dp_j,
            d_inv_depth: proj * self.translation,
        })
    }
}

/// Reprojects one source pixel with inverse depth `inv_depth` from frame i
/// into frame j.
pub fn reproject_pixel(
    pixel: &Vector2<f64>,
    inv_depth: f64,
    t_i: &Pose,
    t_j: &Pose,
    k: &Intrinsics,
) -> Result<Vector2<f64>> {
    RelativeTransform::between(t_i, t_j).reproject(pixel, inv_depth, k)
}

/// Reprojects every pixel of `patch` from frame i into frame j. Output
/// order follows [`Patch::offsets`].
pub fn reproject_patch(
    patch: &Patch,
    t_i: &Pose,
    t_j: &Pose,
    k: &Intrinsics,
) -> Result<Vec<Vector2<f64>>> {
    if !(patch.inv_depth > 0.0) {
        return Err(Error::InvalidInput(format!(
            "inverse depth must be positive, got {}",
            patch.inv_depth
        )));
    }
    let rel = RelativeTransform::between(t_i, t_j);
    patch
        .pixels()
        .map(|px| rel.reproject(&px, patch.inv_depth, k))
        .collect()
}

/// Reprojected pixel with its derivatives.
#[derive(Clone, Copy, Debug)]
pub struct ReprojectionJacobian {
    pub coords: Vector2<f64>,
    /// d(pixel)/d(xi) for `T_i <- T_i * exp(xi)`.
    pub d_pose_i: Matrix2x6,
    /// d(pixel)/d(xi) for `T_j <- T_j * exp(xi)`.
    pub d_pose_j: Matrix2x6,
    pub d_inv_depth: Vector2<f64>,
}

/// Reprojection and analytic Jacobians for a single source pixel.
pub fn reproject_pixel_with_jacobian(
    pixel: &Vector2<f64>,
    inv_depth: f64,
    t_i: &Pose,
    t_j: &Pose,
    k: &Intrinsics,
) -> Result<ReprojectionJacobian> {
    RelativeTransform::between(t_i, t_j).reproject_with_jacobian(pixel, inv_depth, k)
}

/// Per-pixel Jacobians for the whole patch, in [`Patch::offsets`] order.
pub fn reprojection_jacobian(
    patch: &Patch,
    t_i: &Pose,
    t_j: &Pose,
    k: &Intrinsics,
) -> Result<Vec<ReprojectionJacobian>> {
    let rel = RelativeTransform::between(t_i, t_j);
    patch
        .pixels()
        .map(|px| rel.reproject_with_jacobian(&px, patch.inv_depth, k))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::se3::{se3_exp, Twist};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> Intrinsics {
        Intrinsics::new(320.0, 310.0, 160.0, 120.0).unwrap()
    }

    #[test]
    fn rejects_bad_intrinsics() {
        assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(Intrinsics::new(1.0, f64::NAN, 0.0, 0.0).is_err());
    }

    #[test]
    fn offsets_are_row_major() {
        let p = Patch::new(0, Vector2::new(10.0, 20.0), 1, 0.5);
        let px: Vec<_> = p.pixels().collect();
        assert_eq!(px.len(), 9);
        assert_eq!(px[0], Vector2::new(9.0, 19.0));
        assert_eq!(px[1], Vector2::new(10.0, 19.0));
        assert_eq!(px[p.center_index()], p.center);
    }

    #[test]
    fn identity_relative_pose_is_identity_on_coords() {
        let t = se3_exp(&Twist::from_slice(&[0.3, -1.0, 2.0, 0.4, 0.2, -0.9]));
        let p = Patch::new(0, Vector2::new(37.0, 81.0), 2, 0.7);
        let out = reproject_patch(&p, &t, &t, &k()).unwrap();
        for (a, b) in out.iter().zip(p.pixels()) {
            assert!((a - b).norm() <= 1e-12);
        }
    }

    #[test]
    fn lateral_translation_parallax() {
        let delta = 0.1;
        let d = 0.5;
        let p = Patch::new(0, Vector2::new(100.0, 50.0), 1, d);
        let t_j = Pose::from_translation(Vector3::new(delta, 0.0, 0.0));
        let out = reproject_patch(&p, &Pose::identity(), &t_j, &k()).unwrap();
        let shift = out[p.center_index()] - p.center;
        assert!((shift.x - (-320.0 * delta * d)).abs() < 1e-12);
        assert!(shift.y.abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_reported() {
        let p = Patch::new(0, Vector2::new(160.0, 120.0), 0, 1.0);
        let t_j = Pose::from_translation(Vector3::new(0.0, 0.0, 2.0));
        assert!(matches!(
            reproject_patch(&p, &Pose::identity(), &t_j, &k()),
            Err(Error::BehindCamera { .. })
        ));
    }

    #[test]
    fn matches_explicit_point_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = k();
        for _ in 0..500 {
            let t_i = se3_exp(&Twist::from_slice(&std::array::from_fn(|_| {
                rng.random_range(-1.0..1.0)
            })));
            let small: [f64; 6] = std::array::from_fn(|_| rng.random_range(-0.1..0.1));
            let t_j = t_i.compose(&se3_exp(&Twist::from_slice(&small)));
            let depth = rng.random_range(1.0..8.0);
            let px = Vector2::new(rng.random_range(0.0..320.0), rng.random_range(0.0..240.0));
            // oracle: lift to a world point and project explicitly
            let cam_i = k.unproject(&px) * depth;
            let world = t_i.transform_point(&cam_i);
            let cam_j = t_j.inverse().transform_point(&world);
            let expected = Vector2::new(
                k.fx * cam_j.x / cam_j.z + k.cx,
                k.fy * cam_j.y / cam_j.z + k.cy,
            );
            let got = reproject_pixel(&px, 1.0 / depth, &t_i, &t_j, &k).unwrap();
            assert!((got - expected).norm() < 1e-9, "{got} vs {expected}");
        }
    }

    #[test]
    fn translation_jacobian_closed_form_and_antisymmetry() {
        let d = 0.4;
        let t = se3_exp(&Twist::from_slice(&[0.5, 0.1, -0.3, 0.2, -0.1, 0.3]));
        let jac =
            reproject_pixel_with_jacobian(&Vector2::new(160.0, 120.0), d, &t, &t, &k()).unwrap();
        assert!((jac.d_pose_j[(0, 0)] - (-320.0 * d)).abs() < 1e-12);
        assert!(jac.d_pose_j[(1, 0)].abs() < 1e-12);
        assert!((jac.d_pose_i + jac.d_pose_j).abs().max() < 1e-9);
    }

    fn random_config(rng: &mut ChaCha8Rng) -> (Vector2<f64>, f64, Pose, Pose) {
        let t_i = se3_exp(&Twist::from_slice(&std::array::from_fn(|_| rng.random_range(-1.0..1.0))));
        let small: [f64; 6] = std::array::from_fn(|_| rng.random_range(-0.2..0.2));
        let t_j = t_i.compose(&se3_exp(&Twist::from_slice(&small)));
        let px = Vector2::new(rng.random_range(20.0..300.0), rng.random_range(20.0..220.0));
        (px, rng.random_range(0.2..1.0), t_i, t_j)
    }

    #[test]
    fn jacobians_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = k();
        let h = 1e-6;
        for _ in 0..200 {
            let (px, d, t_i, t_j) = random_config(&mut rng);
            let jac = reproject_pixel_with_jacobian(&px, d, &t_i, &t_j, &k).unwrap();
            let f = |ti: &Pose, tj: &Pose, dd: f64| reproject_pixel(&px, dd, ti, tj, &k).unwrap();
            let mut analytic = Vec::new();
            let mut numeric = Vec::new();
            for a in 0..6 {
                let mut e = [0.0; 6];
                e[a] = h;
                let plus = Twist::from_slice(&e);
                e[a] = -h;
                let minus = Twist::from_slice(&e);
                let di = (f(&t_i.retract(&plus), &t_j, d) - f(&t_i.retract(&minus), &t_j, d)) / (2.0 * h);
                let dj = (f(&t_i, &t_j.retract(&plus), d) - f(&t_i, &t_j.retract(&minus), d)) / (2.0 * h);
                numeric.extend([di, dj]);
                analytic.extend([jac.d_pose_i.column(a).into_owned(), jac.d_pose_j.column(a).into_owned()]);
            }
            numeric.push((f(&t_i, &t_j, d + h) - f(&t_i, &t_j, d - h)) / (2.0 * h));
            analytic.push(jac.d_inv_depth);
            let err: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).norm_squared()).sum::<f64>().sqrt();
            let scale: f64 = analytic.iter().map(|a| a.norm_squared()).sum::<f64>().sqrt();
            assert!(err / scale < 1e-4, "relative error {}", err / scale);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn left_gauge_invariance(seed in any::<u64>(), g in proptest::array::uniform6(-2.0f64..2.0)) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (px, d, t_i, t_j) = random_config(&mut rng);
                let gauge = se3_exp(&Twist::from_slice(&g));
                let a = reproject_pixel(&px, d, &t_i, &t_j, &k()).unwrap();
                let b = reproject_pixel(&px, d, &gauge.compose(&t_i), &gauge.compose(&t_j), &k()).unwrap();
                prop_assert!((a - b).norm() < 1e-9);
            }
        }
    }
}
