//! Trajectory alignment and absolute trajectory error.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;

/// Timestamp association gate, seconds.
pub const ASSOCIATION_GATE: f64 = 0.02;
pub const MIN_MATCHES: usize = 3;

/// Timestamped poses, timestamps strictly increasing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    entries: Vec<(f64, Pose)>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<(f64, Pose)>) -> Result<Self> {
        for (i, w) in entries.windows(2).enumerate() {
            if !(w[1].0 > w[0].0) {
                return Err(Error::NonMonotoneTimestamps { line: i + 2 });
            }
        }
        Ok(Trajectory { entries })
    }

    pub fn push(&mut self, timestamp: f64, pose: Pose) -> Result<()> {
        if let Some((last, _)) = self.entries.last() {
            if !(timestamp > *last) {
                return Err(Error::NonMonotoneTimestamps {
                    line: self.entries.len() + 1,
                });
            }
        }
        self.entries.push((timestamp, pose));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(f64, Pose)] {
        &self.entries
    }

    pub fn poses(&self) -> impl Iterator<Item = &Pose> {
        self.entries.iter().map(|(_, p)| p)
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.entries.iter().map(|(_, p)| *p.translation()).collect()
    }

    /// Index of the entry nearest to `t`, if within `gate`.
    pub fn nearest(&self, t: f64, gate: f64) -> Option<usize> {
        if self.entries.is_empty() {
            return None;
        }
        let i = self.entries.partition_point(|(s, _)| *s < t);
        let candidates = [i.checked_sub(1), (i < self.entries.len()).then_some(i)];
        candidates
            .into_iter()
            .flatten()
            .min_by(|&a, &b| {
                (self.entries[a].0 - t)
                    .abs()
                    .total_cmp(&(self.entries[b].0 - t).abs())
            })
            .filter(|&k| (self.entries[k].0 - t).abs() <= gate)
    }
}

/// Similarity transform `x -> scale * R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sim3Alignment {
    pub scale: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Sim3Alignment {
    pub fn identity() -> Self {
        Sim3Alignment {
            scale: 1.0,
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }

    /// Applies the similarity to a pose: rotation composed on the left,
    /// position mapped as a point.
    pub fn apply_pose(&self, pose: &Pose) -> Pose {
        Pose::new(self.rotation * pose.rotation(), self.apply(pose.translation()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AlignMode {
    #[default]
    Sim3,
    Se3,
    None,
}

impl std::str::FromStr for AlignMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim3" => Ok(AlignMode::Sim3),
            "se3" => Ok(AlignMode::Se3),
            "none" => Ok(AlignMode::None),
            other => Err(Error::InvalidInput(format!(
                "unknown alignment '{other}', expected sim3, se3 or none"
            ))),
        }
    }
}

/// Least-squares similarity (or rigid motion) taking `est` onto `gt`.
pub fn umeyama_align(est: &[Vector3<f64>], gt: &[Vector3<f64>], with_scale: bool) -> Result<Sim3Alignment> {
    let n = est.len();
    if n != gt.len() {
        return Err(Error::InvalidInput(format!(
            "point lists differ in length: {n} vs {}",
            gt.len()
        )));
    }
    if n < 3 {
        return Err(Error::DegenerateGeometry(format!("need at least 3 points, got {n}")));
    }
    let nf = n as f64;
    let mean_e = est.iter().sum::<Vector3<f64>>() / nf;
    let mean_g = gt.iter().sum::<Vector3<f64>>() / nf;
    let mut cov = Matrix3::zeros();
    let mut var_e = 0.0;
    for (e, g) in est.iter().zip(gt) {
        let de = e - mean_e;
        cov += (g - mean_g) * de.transpose();
        var_e += de.norm_squared();
    }
    cov /= nf;
    var_e /= nf;

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let sv = svd.singular_values;
    // singular values come unsorted from nalgebra
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if var_e <= f64::EPSILON || sorted[1] <= 1e-12 * sorted[0].max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateGeometry(
            "points are coincident or collinear".into(),
        ));
    }

    let mut s = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        // flip the axis of the smallest singular value
        let smallest = (0..3).min_by(|&a, &b| sv[a].total_cmp(&sv[b])).unwrap();
        s[(smallest, smallest)] = -1.0;
    }
    let r = u * s * v_t;
    let scale = if with_scale {
        (0..3).map(|i| sv[i] * s[(i, i)]).sum::<f64>() / var_e
    } else {
        1.0
    };
    let rotation = UnitQuaternion::from_matrix(&r);
    let translation = mean_g - rotation * mean_e * scale;
    Ok(Sim3Alignment {
        scale,
        rotation,
        translation,
    })
}

/// Matched position pairs `(est, gt)` by nearest-timestamp association.
pub fn associate(est: &Trajectory, gt: &Trajectory) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    est.entries()
        .iter()
        .filter_map(|(t, p)| {
            gt.nearest(*t, ASSOCIATION_GATE)
                .map(|k| (*p.translation(), *gt.entries()[k].1.translation()))
        })
        .collect()
}

/// Translational RMSE after optional alignment of `est` onto `gt`.
pub fn ate_rmse(est: &Trajectory, gt: &Trajectory, align: AlignMode) -> Result<f64> {
    let pairs = associate(est, gt);
    if pairs.len() < MIN_MATCHES {
        return Err(Error::InsufficientMatches {
            found: pairs.len(),
            required: MIN_MATCHES,
        });
    }
    let (e, g): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let alignment = match align {
        AlignMode::Sim3 => umeyama_align(&e, &g, true)?,
        AlignMode::Se3 => umeyama_align(&e, &g, false)?,
        AlignMode::None => Sim3Alignment::identity(),
    };
    let sq: f64 = e
        .iter()
        .zip(&g)
        .map(|(a, b)| (b - alignment.apply(a)).norm_squared())
        .sum();
    Ok((sq / e.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{se3_exp, Twist};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut impl Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
            .collect()
    }

    fn trajectory(points: &[Vector3<f64>]) -> Trajectory {
        Trajectory::from_entries(
            points.iter().enumerate().map(|(i, p)| (i as f64, Pose::from_translation(*p))).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_points(&mut rng, 10);
        let a = umeyama_align(&x, &x, true).unwrap();
        assert!((a.scale - 1.0).abs() < 1e-12);
        assert!(a.rotation.angle() < 1e-9);
        assert!(a.translation.norm() < 1e-12);
    }

    #[test]
    fn recovers_known_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let gt = random_points(&mut rng, 12);
            let q = se3_exp(&Twist::from_slice(&std::array::from_fn(|_| rng.random_range(-1.5..1.5))));
            let s = 2.0;
            // est = s R gt + t, so the alignment must invert it
            let est: Vec<_> = gt.iter().map(|p| q.rotation() * p * s + q.translation()).collect();
            let a = umeyama_align(&est, &gt, true).unwrap();
            assert!((a.scale - 0.5).abs() < 1e-9);
            let r_inv = q.rotation().inverse();
            assert!((a.rotation.to_rotation_matrix().matrix() - r_inv.to_rotation_matrix().matrix()).abs().max() < 1e-9);
            let t_inv = -(r_inv * q.translation()) / s;
            assert!((a.translation - t_inv).norm() < 1e-9);
        }
    }

    #[test]
    fn reflection_gives_proper_rotation_with_optimal_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gt = random_points(&mut rng, 15);
        let est: Vec<_> = gt.iter().map(|p| Vector3::new(p.x, p.y, -p.z) * 1.3).collect();
        let a = umeyama_align(&est, &gt, true).unwrap();
        assert!((a.rotation.to_rotation_matrix().matrix().determinant() - 1.0).abs() < 1e-12);
        let residual = |al: &Sim3Alignment| -> f64 {
            est.iter().zip(&gt).map(|(e, g)| (g - al.apply(e)).norm_squared()).sum()
        };

        // oracle: every proper U diag(+-1) V^T with its own optimal scale and offset
        let n = gt.len() as f64;
        let me = est.iter().sum::<Vector3<f64>>() / n;
        let mg = gt.iter().sum::<Vector3<f64>>() / n;
        let mut cov = Matrix3::zeros();
        let mut var = 0.0;
        for (e, g) in est.iter().zip(&gt) {
            cov += (g - mg) * (e - me).transpose();
            var += (e - me).norm_squared();
        }
        let svd = cov.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut best = f64::INFINITY;
        for signs in 0..8u32 {
            let d = Matrix3::from_diagonal(&Vector3::from_fn(|i, _| if signs >> i & 1 == 1 { -1.0 } else { 1.0 }));
            let r = u * d * vt;
            if r.determinant() < 0.0 {
                continue;
            }
            let num: f64 = est.iter().zip(&gt).map(|(e, g)| (g - mg).dot(&(r * (e - me)))).sum();
            let s = num / var;
            if s <= 0.0 {
                // a negative scale is a reflection in disguise
                continue;
            }
            let rot = UnitQuaternion::from_matrix(&r);
            let cand = Sim3Alignment { scale: s, rotation: rot, translation: mg - rot * me * s };
            best = best.min(residual(&cand));
        }
        assert!((residual(&a) - best).abs() < 1e-9 * best.max(1.0));
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let line: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(umeyama_align(&line, &line, true), Err(Error::DegenerateGeometry(_))));
        let same = vec![Vector3::new(1.0, 1.0, 1.0); 4];
        assert!(umeyama_align(&same, &same, true).is_err());
    }

    #[test]
    fn ate_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = random_points(&mut rng, 20);
        let a = trajectory(&pts);
        assert!(ate_rmse(&a, &a, AlignMode::Sim3).unwrap() < 1e-12);
        assert_eq!(ate_rmse(&a, &a, AlignMode::None).unwrap(), 0.0);
        let shifted: Vec<_> = pts.iter().map(|p| p + Vector3::new(1.0, 0.0, 0.0)).collect();
        let b = trajectory(&shifted);
        assert!(ate_rmse(&a, &b, AlignMode::Sim3).unwrap() < 1e-12);
        assert!((ate_rmse(&a, &b, AlignMode::None).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ate_matches_residual_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = random_points(&mut rng, 30);
        let g = random_points(&mut rng, 30);
        let (te, tg) = (trajectory(&e), trajectory(&g));
        let al = umeyama_align(&e, &g, true).unwrap();
        let mut sq = 0.0;
        for k in 0..30 {
            let d = g[k] - (al.rotation * e[k] * al.scale + al.translation);
            sq += d.x * d.x + d.y * d.y + d.z * d.z;
        }
        let oracle = (sq / 30.0).sqrt();
        assert!((ate_rmse(&te, &tg, AlignMode::Sim3).unwrap() - oracle).abs() <= 1e-12);
    }

    #[test]
    fn association_gate() {
        let e = Trajectory::from_entries(vec![
            (0.0, Pose::identity()),
            (1.0, Pose::identity()),
            (2.0, Pose::identity()),
            (3.0, Pose::identity()),
        ])
        .unwrap();
        let g = Trajectory::from_entries(vec![
            (0.01, Pose::identity()),
            (1.5, Pose::identity()),
            (2.019, Pose::identity()),
            (2.99, Pose::identity()),
        ])
        .unwrap();
        assert_eq!(associate(&e, &g).len(), 3);
        assert!(matches!(
            ate_rmse(&e, &Trajectory::from_entries(vec![(10.0, Pose::identity())]).unwrap(), AlignMode::None),
            Err(Error::InsufficientMatches { found: 0, .. })
        ));
    }

    #[test]
    fn monotone_timestamps_enforced() {
        assert!(matches!(
            Trajectory::from_entries(vec![(1.0, Pose::identity()), (1.0, Pose::identity())]),
            Err(Error::NonMonotoneTimestamps { line: 2 })
        ));
    }
}
