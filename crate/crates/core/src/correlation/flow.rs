use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{CorrelationMap, FeatureMap};
use crate::geometry::{relative_pose, Intrinsics, Patch, Pose, MIN_DEPTH};
use crate::graph::Edge;
use crate::seed::derive_seed;

/// Lowest confidence the correlation tracker reports.
pub const TRACKER_CONFIDENCE_FLOOR: f64 = 1e-3;
/// Confidence the oracle assigns to occluded or out-of-frame targets.
pub const ORACLE_HIDDEN_CONFIDENCE: f64 = 1e-6;
/// Relative depth mismatch above which the oracle treats a target as
/// occluded.
pub const ORACLE_OCCLUSION_TOLERANCE: f64 = 1e-2;

/// A flow correction `delta` (pixels) and its per-axis confidence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowUpdate {
    pub delta: Vector2<f64>,
    pub confidence: Vector2<f64>,
    /// Set when the provider had nothing to lock onto.
    pub degenerate: bool,
}

/// Everything a provider may look at for one edge.
#[derive(Clone, Copy, Debug)]
pub struct FlowQuery<'a> {
    pub edge: Edge,
    /// Source patch, with its current inverse depth.
    pub patch: &'a Patch,
    /// Current reprojection of every patch pixel into the target frame.
    pub reprojected: &'a [Vector2<f64>],
    pub correlation: Option<&'a CorrelationMap>,
}

impl FlowQuery<'_> {
    pub fn reprojected_center(&self) -> Vector2<f64> {
        self.reprojected[self.patch.center_index()]
    }
}

/// Produces a flow update for an edge. Implementations must be
/// deterministic and return strictly positive confidences.
pub trait FlowProvider: Send + Sync {
    /// Whether [`FlowQuery::correlation`] must be filled in.
    fn needs_correlation(&self) -> bool;

    fn estimate(&self, query: &FlowQuery<'_>) -> FlowUpdate;
}

/// Argmax of the pixel-summed correlation with a per-axis quadratic
/// sub-cell refinement.
pub fn argmax_flow(corr: &CorrelationMap) -> FlowUpdate {
    let s = corr.side();
    let degenerate = FlowUpdate {
        delta: Vector2::zeros(),
        confidence: Vector2::repeat(TRACKER_CONFIDENCE_FLOOR),
        degenerate: true,
    };
    if corr.valid_count() == 0 {
        return degenerate;
    }
    let summed = corr.summed();
    let at = |u: usize, v: usize| summed[v * s + u];

    let (mut best_u, mut best_v, mut best) = (0, 0, f64::NEG_INFINITY);
    let mut lowest = f64::INFINITY;
    for v in 0..s {
        for u in 0..s {
            let x = at(u, v);
            lowest = lowest.min(x);
            if x > best {
                best = x;
                best_u = u;
                best_v = v;
            }
        }
    }
    if best - lowest <= f64::EPSILON * best.abs().max(1.0) {
        return degenerate;
    }

    let refine = |left: f64, center: f64, right: f64| {
        let denom = left - 2.0 * center + right;
        if denom < 0.0 {
            (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    };
    let off_x = if best_u > 0 && best_u + 1 < s {
        refine(at(best_u - 1, best_v), best, at(best_u + 1, best_v))
    } else {
        0.0
    };
    let off_y = if best_v > 0 && best_v + 1 < s {
        refine(at(best_u, best_v - 1), best, at(best_u, best_v + 1))
    } else {
        0.0
    };

    let mut neighbor_sum = 0.0;
    let mut neighbors = 0usize;
    for dv in -1i64..=1 {
        for du in -1i64..=1 {
            if du == 0 && dv == 0 {
                continue;
            }
            let (u, v) = (best_u as i64 + du, best_v as i64 + dv);
            if u >= 0 && v >= 0 && (u as usize) < s && (v as usize) < s {
                neighbor_sum += at(u as usize, v as usize);
                neighbors += 1;
            }
        }
    }
    let prominence = if neighbors > 0 {
        best - neighbor_sum / neighbors as f64
    } else {
        0.0
    };
    let confidence = prominence.max(TRACKER_CONFIDENCE_FLOOR);

    let half = corr.half() as f64;
    let stride = corr.stride() as f64;
    FlowUpdate {
        delta: Vector2::new(
            (best_u as f64 - half + off_x) * stride,
            (best_v as f64 - half + off_y) * stride,
        ),
        confidence: Vector2::repeat(confidence),
        degenerate: false,
    }
}

/// The correlation tracker provider.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrackerProvider;

impl FlowProvider for TrackerProvider {
    fn needs_correlation(&self) -> bool {
        true
    }

    fn estimate(&self, query: &FlowQuery<'_>) -> FlowUpdate {
        match query.correlation {
            Some(corr) => argmax_flow(corr),
            None => FlowUpdate {
                delta: Vector2::zeros(),
                confidence: Vector2::repeat(TRACKER_CONFIDENCE_FLOOR),
                degenerate: true,
            },
        }
    }
}

/// Ground-truth scene used by the oracle provider: per-frame poses and
/// metric depth maps (single channel, meters) indexed by frame id.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub intrinsics: Intrinsics,
    pub width: usize,
    pub height: usize,
    pub poses: Vec<Pose>,
    pub depths: Vec<FeatureMap>,
}

impl GroundTruth {
    fn depth_at(&self, frame: usize, pixel: &Vector2<f64>) -> Option<f64> {
        let map = self.depths.get(frame)?;
        let l = map.lookup(pixel);
        let d = l.values[0] as f64;
        (l.in_bounds && d > MIN_DEPTH).then_some(d)
    }

    /// True position of the source patch center in the target frame and
    /// whether it is visible there.
    pub fn true_target(&self, edge: &Edge, center: &Vector2<f64>) -> Option<(Vector2<f64>, bool)> {
        let t_i = self.poses.get(edge.source)?;
        let t_j = self.poses.get(edge.target)?;
        let depth = self.depth_at(edge.source, center)?;
        let k = &self.intrinsics;
        let p_i = k.unproject(center) * depth;
        let p_j = relative_pose(t_i, t_j).transform_point(&p_i);
        if p_j.z <= MIN_DEPTH {
            return None;
        }
        let uv = k.project(&p_j);
        let inside = uv.x >= 0.0
            && uv.y >= 0.0
            && uv.x <= (self.width - 1) as f64
            && uv.y <= (self.height - 1) as f64;
        let visible = inside
            && match self.depths.get(edge.target) {
                Some(map) => {
                    let rounded = Vector2::new(uv.x.round(), uv.y.round());
                    let seen = map.lookup(&rounded).values[0] as f64;
                    (seen - p_j.z).abs() <= ORACLE_OCCLUSION_TOLERANCE * p_j.z
                }
                None => true,
            };
        Some((uv, visible))
    }
}

/// Seed for the noise draw of one edge.
pub fn edge_seed(seed: u64, edge: &Edge) -> u64 {
    derive_seed(seed, &[edge.source as u64, edge.target as u64, edge.patch as u64])
}

/// Oracle flow for one query: exact correction to the true target plus
/// Gaussian noise drawn from a per-edge stream.
pub fn oracle_flow(gt: &GroundTruth, query: &FlowQuery<'_>, noise_sigma: f64, rng_seed: u64) -> FlowUpdate {
    let current = query.reprojected_center();
    let mut rng = ChaCha8Rng::seed_from_u64(edge_seed(rng_seed, &query.edge));
    let noise = if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("finite positive sigma");
        Vector2::new(normal.sample(&mut rng), normal.sample(&mut rng))
    } else {
        Vector2::zeros()
    };
    let precision = 1.0 / (noise_sigma * noise_sigma + 1e-6);
    match gt.true_target(&query.edge, &query.patch.center) {
        Some((target, visible)) => FlowUpdate {
            delta: target - current + noise,
            confidence: Vector2::repeat(if visible { precision } else { ORACLE_HIDDEN_CONFIDENCE }),
            degenerate: false,
        },
        None => FlowUpdate {
            delta: Vector2::zeros(),
            confidence: Vector2::repeat(ORACLE_HIDDEN_CONFIDENCE),
            degenerate: true,
        },
    }
}

/// Ground-truth provider for tests and benchmarks.
#[derive(Clone, Debug)]
pub struct OracleProvider {
    pub ground_truth: GroundTruth,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl FlowProvider for OracleProvider {
    fn needs_correlation(&self) -> bool {
        false
    }

    fn estimate(&self, query: &FlowQuery<'_>) -> FlowUpdate {
        oracle_flow(&self.ground_truth, query, self.noise_sigma, self.seed)
    }
}
