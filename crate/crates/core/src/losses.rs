//! Training losses evaluated as plain metrics (no gradients).

use nalgebra::Vector2;

use crate::correlation::FeatureMap;
use crate::error::{Error, Result};
use crate::geometry::{se3_log, Pose};
use crate::graph::Edge;

/// Default softmax temperature for feature matching.
pub const DEFAULT_TEMPERATURE: f64 = 10.0;

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

fn check_feature(f0: &[f32], map: &FeatureMap) -> Result<()> {
    if f0.len() != map.channels() {
        return Err(Error::InvalidInput(format!(
            "feature has {} channels, map has {}",
            f0.len(),
            map.channels()
        )));
    }
    if dot(f0, f0).sqrt() < 1e-12 {
        return Err(Error::ZeroFeature);
    }
    Ok(())
}

/// Softmax over every location of `gamma * <F(m, n), f0>`, row-major.
/// Features are expected to be L2-normalized per location.
pub fn feature_match_distribution(map: &FeatureMap, f0: &[f32], gamma: f64) -> Result<Vec<f64>> {
    check_feature(f0, map)?;
    let logits: Vec<f64> = (0..map.height() * map.width())
        .map(|i| gamma * dot(map.cell(i / map.width(), i % map.width()), f0))
        .collect();
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Probability that `f0` matches its ground-truth location `(row, col)`.
pub fn feature_match_prob(map: &FeatureMap, f0: &[f32], gt_loc: (usize, usize), gamma: f64) -> Result<f64> {
    let (row, col) = gt_loc;
    if row >= map.height() || col >= map.width() {
        return Err(Error::InvalidInput(format!(
            "location ({row}, {col}) outside {}x{} map",
            map.height(),
            map.width()
        )));
    }
    check_feature(f0, map)?;
    let logit = |r: usize, c: usize| gamma * dot(map.cell(r, c), f0);
    let mut top = f64::NEG_INFINITY;
    for r in 0..map.height() {
        for c in 0..map.width() {
            top = top.max(logit(r, c));
        }
    }
    let mut total = 0.0;
    for r in 0..map.height() {
        for c in 0..map.width() {
            total += (logit(r, c) - top).exp();
        }
    }
    Ok((logit(row, col) - top).exp() / total)
}

/// One `(frame t, point l)` term of the feature loss.
#[derive(Clone, Debug)]
pub struct FeatureObservation<'a> {
    /// Index into the frame feature maps.
    pub frame: usize,
    /// Feature of the point on the base frame.
    pub source_feature: &'a [f32],
    pub gt_loc: (usize, usize),
    pub visible: bool,
}

/// Visibility-masked cross-entropy of the match probabilities.
pub fn feature_loss(observations: &[FeatureObservation<'_>], maps: &[FeatureMap], gamma: f64) -> Result<f64> {
    let mut visible = 0usize;
    let mut sum = 0.0;
    for obs in observations.iter().filter(|o| o.visible) {
        let map = maps.get(obs.frame).ok_or_else(|| {
            Error::InvalidInput(format!("observation references missing frame {}", obs.frame))
        })?;
        sum += feature_match_prob(map, obs.source_feature, obs.gt_loc, gamma)?.ln();
        visible += 1;
    }
    if visible == 0 {
        return Err(Error::AllOccluded);
    }
    Ok(-sum / visible as f64)
}

/// Negative log-likelihood of flow residuals under diagonal precision
/// weights `sigma`.
pub fn flow_nll_loss(
    edges: &[Edge],
    gt_delta: &[Vector2<f64>],
    est_delta: &[Vector2<f64>],
    sigma: &[Vector2<f64>],
) -> Result<f64> {
    let n = edges.len();
    if gt_delta.len() != n || est_delta.len() != n || sigma.len() != n {
        return Err(Error::InvalidInput(format!(
            "flow loss inputs disagree in length: {n} edges, {} gt, {} est, {} weights",
            gt_delta.len(),
            est_delta.len(),
            sigma.len()
        )));
    }
    let mut total = 0.0;
    for (index, ((gt, est), w)) in gt_delta.iter().zip(est_delta).zip(sigma).enumerate() {
        for value in [w.x, w.y] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::NonPositiveWeight { index, value });
            }
        }
        let r = gt - est;
        total += w.x * r.x * r.x + w.y * r.y * r.y - (w.x * w.y).ln();
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub salient: f64,
    pub random: f64,
    pub flow: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            salient: 1.0,
            random: 0.2,
            flow: 0.4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub feature_salient: f64,
    pub feature_random: f64,
    pub flow: f64,
    pub total: f64,
    pub weights: LossWeights,
}

/// Weighted sum of the pre-training loss terms.
pub fn combined_pretrain_loss(
    feature_salient: f64,
    feature_random: f64,
    flow: f64,
    weights: LossWeights,
) -> LossBreakdown {
    LossBreakdown {
        feature_salient,
        feature_random,
        flow,
        total: weights.salient * feature_salient + weights.random * feature_random + weights.flow * flow,
        weights,
    }
}

/// `X_ij = X_j * X_i^-1`.
pub fn relative_motion(x_i: &Pose, x_j: &Pose) -> Pose {
    x_j.compose(&x_i.inverse())
}

/// Sum over pairs of `|| log(G_ij^-1 T_ij) ||`.
pub fn pose_loss(ground_truth: &[Pose], estimate: &[Pose], pairs: &[(usize, usize)]) -> Result<f64> {
    let mut total = 0.0;
    for &(i, j) in pairs {
        let (gi, gj, ti, tj) = match (
            ground_truth.get(i),
            ground_truth.get(j),
            estimate.get(i),
            estimate.get(j),
        ) {
            (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
            _ => {
                return Err(Error::InvalidInput(format!("pair ({i}, {j}) is out of range")));
            }
        };
        let g = relative_motion(gi, gj);
        let t = relative_motion(ti, tj);
        total += se3_log(&g.inverse().compose(&t))?.norm();
    }
    Ok(total)
}
