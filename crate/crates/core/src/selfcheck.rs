//! A quick embedded invariant suite, run by `svo selfcheck`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bundle_adjust::{schur_solve, weighted_ba_with, BAOptions, BAProblem};
use crate::correlation::{FeatureMap, OracleProvider};
use crate::eval::{ate_rmse, umeyama_align, AlignMode, Trajectory};
use crate::geometry::{reproject_pixel, reproject_pixel_with_jacobian, se3_exp, Intrinsics, Patch, Pose, Twist};
use crate::graph::Edge;
use crate::homography_gen::{generate_sequence, gt_correspondence, GeneratorConfig};
use crate::image::Image;
use crate::io::{format_trajectory, parse_trajectory};
use crate::losses::pose_loss;
use crate::saliency::salient_score_map;
use crate::synthetic::{render_sequence, SceneConfig};
use crate::vo_pipeline::{run_sequence, PipelineConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn() -> Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn salience_brute_force() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let f = FeatureMap::from_fn(6, 7, 3, |_, _, _| rng.random_range(0.0..2.0));
        let s = salient_score_map(&f).map_err(|e| e.to_string())?;
        for m in 0..6 {
            for n in 0..7 {
                let mut best = f64::NEG_INFINITY;
                let gmax = (0..3).map(|g| f.get(m, n, g) as f64).fold(f64::NEG_INFINITY, f64::max);
                for h in 0..3 {
                    let mut sum = 0.0;
                    for mm in m.saturating_sub(1)..=(m + 1).min(5) {
                        for nn in n.saturating_sub(1)..=(n + 1).min(6) {
                            sum += (f.get(mm, nn, h) as f64).exp();
                        }
                    }
                    let v = (f.get(m, n, h) as f64).exp() / sum * (f.get(m, n, h) as f64 / gmax);
                    best = best.max(v);
                }
                worst = worst.max((best - s.get(m, n)).abs());
            }
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("max deviation {worst:.1e}"))
}

fn jacobians() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let k = Intrinsics::new(300.0, 300.0, 160.0, 120.0).map_err(|e| e.to_string())?;
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let t_i = se3_exp(&Twist::from_slice(&std::array::from_fn(|_| rng.random_range(-1.0..1.0))));
        let t_j = t_i.compose(&se3_exp(&Twist::from_slice(&std::array::from_fn(|_| rng.random_range(-0.2..0.2)))));
        let px = Vector2::new(rng.random_range(20.0..300.0), rng.random_range(20.0..220.0));
        let d = rng.random_range(0.2..1.0);
        let jac = reproject_pixel_with_jacobian(&px, d, &t_i, &t_j, &k).map_err(|e| e.to_string())?;
        let f = |a: &Pose, b: &Pose| reproject_pixel(&px, d, a, b, &k).expect("in front");
        let (mut err, mut norm) = (0.0, 0.0);
        for a in 0..6 {
            let mut e = [0.0; 6];
            e[a] = h;
            let p = Twist::from_slice(&e);
            e[a] = -h;
            let m = Twist::from_slice(&e);
            let ni = (f(&t_i.retract(&p), &t_j) - f(&t_i.retract(&m), &t_j)) / (2.0 * h);
            let nj = (f(&t_i, &t_j.retract(&p)) - f(&t_i, &t_j.retract(&m))) / (2.0 * h);
            err += (ni - jac.d_pose_i.column(a)).norm_squared() + (nj - jac.d_pose_j.column(a)).norm_squared();
            norm += jac.d_pose_i.column(a).norm_squared() + jac.d_pose_j.column(a).norm_squared();
        }
        worst = worst.max((err / norm).sqrt());
    }
    ensure(worst < 1e-4, || format!("relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:.1e}"))
}

fn schur_equals_dense() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (p, m) = (12, 20);
    let a = DMatrix::from_fn(p + m + 5, p + m, |_, _| rng.random_range(-1.0..1.0));
    let h = a.transpose() * &a + DMatrix::identity(p + m, p + m) * 0.1;
    let b = DVector::from_fn(p + m, |_, _| rng.random_range(-1.0..1.0));
    // keep the depth block diagonal by zeroing its off-diagonal part
    let mut h = h;
    for i in p..p + m {
        for j in p..p + m {
            if i != j {
                h[(i, j)] = 0.0;
            }
        }
    }
    let h = &h + DMatrix::identity(p + m, p + m) * (p + m) as f64;
    let hp = h.view((0, 0), (p, p)).into_owned();
    let hd = DVector::from_fn(m, |i, _| h[(p + i, p + i)]);
    let c = h.view((0, p), (p, m)).into_owned();
    let (dp, dd) = schur_solve(&hp, &hd, &c, &b.rows(0, p).into_owned(), &b.rows(p, m).into_owned())
        .map_err(|e| e.to_string())?;
    let dense = h.lu().solve(&b).ok_or("dense solve failed")?;
    let mut joint = dp.clone();
    joint.extend(dd.iter().copied());
    let rel = (joint - &dense).norm() / dense.norm();
    ensure(rel < 1e-8, || format!("relative difference {rel:e}"))?;
    Ok(format!("relative difference {rel:.1e}"))
}

fn ba_recovery() -> Result<String, String> {
    let k = Intrinsics::new(300.0, 300.0, 160.0, 120.0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let gt: Vec<Pose> = (0..4)
        .map(|i| Pose::from_translation(Vector3::new(0.1 * i as f64, 0.02 * i as f64, 0.0)))
        .collect();
    let mut patches = Vec::new();
    let mut depths = Vec::new();
    for f in 0..4 {
        for _ in 0..3 {
            let c = Vector2::new(rng.random_range(60.0..260.0), rng.random_range(40.0..200.0));
            let d = rng.random_range(0.3..0.7);
            depths.push(d);
            patches.push(Patch::new(f, c, 1, d * (1.0 + rng.random_range(-0.05..0.05))));
        }
    }
    let mut edges = Vec::new();
    let mut targets = Vec::new();
    for (n, p) in patches.iter().enumerate() {
        for j in (0..4).filter(|&j| j != p.frame_id) {
            edges.push(Edge::new(p.frame_id, j, n));
            targets.push(reproject_pixel(&p.center, depths[n], &gt[p.frame_id], &gt[j], &k).map_err(|e| e.to_string())?);
        }
    }
    let mut poses = gt.clone();
    for pose in poses.iter_mut().skip(2) {
        let xi: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let xi = Twist::from_slice(&xi);
        *pose = pose.retract(&Twist(xi.0 * (0.02 / xi.norm())));
    }
    let weights = vec![Vector2::repeat(1.0); edges.len()];
    // the first two poses fix the gauge, including scale
    let mut problem = BAProblem::new(poses, patches, edges, targets, weights, k);
    problem.fixed_poses[1] = true;
    let sol = weighted_ba_with(
        &problem,
        &BAOptions {
            iterations: 10,
            ..BAOptions::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let pose_err = sol
        .poses
        .iter()
        .zip(&gt)
        .map(|(a, b)| b.inverse().compose(a).log().map(|t| t.norm()).unwrap_or(f64::INFINITY))
        .fold(0.0f64, f64::max);
    let depth_err = sol
        .inv_depths
        .iter()
        .zip(&depths)
        .map(|(a, b)| ((a - b) / b).abs())
        .fold(0.0f64, f64::max);
    ensure(pose_err < 1e-6 && depth_err < 1e-6, || format!("pose {pose_err:e}, depth {depth_err:e}"))?;
    Ok(format!("pose error {pose_err:.1e}, depth error {depth_err:.1e}"))
}

fn homography_correspondence() -> Result<String, String> {
    let base = Image::from_fn(64, 48, |x, y| (128.0 + 60.0 * ((x as f32) * 0.3).sin() * ((y as f32) * 0.2).cos()).round());
    let cfg = GeneratorConfig {
        length: 3,
        ..GeneratorConfig::default()
    };
    let seq = generate_sequence(&base, &cfg, 5).map_err(|e| e.to_string())?;
    let points: Vec<Vector2<f64>> = (0..50).map(|i| Vector2::new((i % 10) as f64 * 6.0 + 2.0, (i / 10) as f64 * 9.0 + 3.0)).collect();
    let (corr, _) = gt_correspondence(&seq, &points).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (t, row) in corr.iter().enumerate() {
        for (p, q) in points.iter().zip(row) {
            worst = worst.max((seq.homographies[t].apply(p) - q).norm());
        }
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    Ok(format!("max deviation {worst:.1e}"))
}

fn loss_fixed_points() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let poses: Vec<Pose> = (0..5)
        .map(|_| se3_exp(&Twist::from_slice(&std::array::from_fn(|_| rng.random_range(-1.0..1.0)))))
        .collect();
    let pairs: Vec<(usize, usize)> = (0..4).map(|i| (i, i + 1)).collect();
    let l = pose_loss(&poses, &poses, &pairs).map_err(|e| e.to_string())?;
    ensure(l.abs() <= 1e-9, || format!("pose loss {l:e}"))?;
    Ok(format!("pose loss {l:.1e}"))
}

fn umeyama_and_tum() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let gt: Vec<Vector3<f64>> = (0..10)
        .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let r = UnitQuaternion::from_euler_angles(0.3, -0.5, 1.1);
    let t = Vector3::new(0.5, -2.0, 1.0);
    let est: Vec<Vector3<f64>> = gt.iter().map(|p| r * p * 2.0 + t).collect();
    let a = umeyama_align(&est, &gt, true).map_err(|e| e.to_string())?;
    ensure((a.scale - 0.5).abs() < 1e-9, || format!("scale {}", a.scale))?;
    let traj = Trajectory::from_entries(
        gt.iter()
            .enumerate()
            .map(|(i, p)| (i as f64 * 0.1, Pose::new(r, *p)))
            .collect(),
    )
    .map_err(|e| e.to_string())?;
    let back = parse_trajectory(&format_trajectory(&traj)).map_err(|e| e.to_string())?;
    let ate = ate_rmse(&back, &traj, AlignMode::None).map_err(|e| e.to_string())?;
    ensure(ate < 1e-9, || format!("TUM round trip error {ate:e}"))?;
    Ok(format!("scale error {:.1e}, round trip {ate:.1e}", (a.scale - 0.5).abs()))
}

fn pipeline_zero_noise() -> Result<String, String> {
    let seq = render_sequence(&SceneConfig {
        frames: 6,
        ..SceneConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let cfg = PipelineConfig {
        patches_per_frame: 24,
        removal_window: 5,
        neighborhood: 3,
        optimization_window: 4,
        iterations: 4,
        ..PipelineConfig::default()
    };
    let provider = Arc::new(OracleProvider {
        ground_truth: seq.ground_truth(),
        noise_sigma: 0.0,
        seed: 0,
    });
    let traj = run_sequence(&seq.images, &cfg, seq.intrinsics, provider).map_err(|e| e.to_string())?;
    let ate = ate_rmse(&traj, &seq.trajectory(), AlignMode::Sim3).map_err(|e| e.to_string())?;
    ensure(ate < 1e-6, || format!("ATE {ate:e}"))?;
    Ok(format!("ATE {ate:.1e} m"))
}

const CHECKS: &[(&str, Check)] = &[
    ("salience_brute_force", salience_brute_force),
    ("reprojection_jacobians", jacobians),
    ("schur_equals_dense", schur_equals_dense),
    ("ba_exact_recovery", ba_recovery),
    ("homography_correspondence", homography_correspondence),
    ("loss_fixed_points", loss_fixed_points),
    ("umeyama_and_tum", umeyama_and_tum),
    ("pipeline_zero_noise", pipeline_zero_noise),
];

pub fn run_selfcheck() -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|(name, check)| {
            let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
            match outcome {
                Ok(detail) => CheckResult {
                    name,
                    passed: true,
                    detail,
                },
                Err(detail) => CheckResult {
                    name,
                    passed: false,
                    detail,
                },
            }
        })
        .collect()
}
