//! The odometry loop: per frame, extract features and patches, connect
//! them to neighboring frames, then alternate flow updates and weighted
//! bundle adjustment over a sliding window of active frames.

use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle_adjust::{weighted_ba_with, BAOptions, BAProblem, DEFAULT_DAMPING};
use crate::correlation::{
    correlation_map, extract_features, FeatureConfig, FeatureMap, FlowProvider, FlowQuery, DEFAULT_GRID_SIDE,
};
use crate::error::{Error, Result};
use crate::eval::Trajectory;
use crate::geometry::{Intrinsics, Patch, Pose, RelativeTransform};
use crate::graph::Edge;
use crate::image::Image;
use crate::saliency::{build_patch_set, salient_score_map, select_salient_patches, Interior, PatchLabel, SelectionConfig};
use crate::seed::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub patches_per_frame: usize,
    /// How many of `patches_per_frame` are drawn uniformly from the
    /// image interior instead of the salient pool.
    pub random_patches: usize,
    pub patch_radius: usize,
    pub nms_radius: usize,
    /// Gridding cell side for candidate selection, feature cells.
    pub selection_grid: usize,
    /// Active frames kept; older frames are frozen and logged.
    pub removal_window: usize,
    /// Flow + BA rounds per frame.
    pub iterations: usize,
    /// Edges connect frames at most this many indices apart.
    pub neighborhood: usize,
    /// Frames this many indices behind the newest, or further, keep their
    /// poses fixed during bundle adjustment.
    pub optimization_window: usize,
    pub gn_iterations: usize,
    /// Correlation grid side, odd.
    pub grid_side: usize,
    pub damping: f64,
    pub full_patch_residuals: bool,
    pub features: FeatureConfig,
    /// Seed for patch sampling. Derived from the run seed by the CLI, so it
    /// is not part of the serialized configuration.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            patches_per_frame: 96,
            random_patches: 0,
            patch_radius: 1,
            nms_radius: 4,
            selection_grid: 4,
            removal_window: 18,
            iterations: 8,
            neighborhood: 13,
            optimization_window: 10,
            gn_iterations: 2,
            grid_side: DEFAULT_GRID_SIDE,
            damping: DEFAULT_DAMPING,
            full_patch_residuals: false,
            features: FeatureConfig::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("patches_per_frame", self.patches_per_frame),
            ("patch_radius", self.patch_radius),
            ("nms_radius", self.nms_radius),
            ("selection_grid", self.selection_grid),
            ("removal_window", self.removal_window),
            ("neighborhood", self.neighborhood),
            ("optimization_window", self.optimization_window),
            ("gn_iterations", self.gn_iterations),
            ("grid_side", self.grid_side),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.random_patches > self.patches_per_frame {
            return Err(Error::Config(format!(
                "random_patches ({}) exceeds patches_per_frame ({})",
                self.random_patches, self.patches_per_frame
            )));
        }
        if self.neighborhood >= self.removal_window {
            return Err(Error::Config(format!(
                "neighborhood ({}) must be smaller than removal_window ({})",
                self.neighborhood, self.removal_window
            )));
        }
        if self.grid_side.is_multiple_of(2) {
            return Err(Error::Config(format!("grid_side must be odd, got {}", self.grid_side)));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(Error::Config(format!("damping must be non-negative, got {}", self.damping)));
        }
        self.features.validate()
    }
}

/// A frame in the optimization window.
#[derive(Clone, Debug)]
pub struct ActiveFrame {
    pub id: usize,
    pub pose: Pose,
    pub features: FeatureMap,
    /// Patches with `frame_id == id`.
    pub patches: Vec<Patch>,
    pub labels: Vec<PatchLabel>,
}

/// Patch `patch` of frame `source` observed in frame `target`, with the
/// latest flow target and confidence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphEdge {
    pub edge: Edge,
    pub target_pos: Vector2<f64>,
    pub weight: Vector2<f64>,
    /// False until a flow update succeeds, or when the last reprojection
    /// failed.
    pub valid: bool,
}

pub struct OdometryState {
    config: PipelineConfig,
    intrinsics: Intrinsics,
    width: usize,
    height: usize,
    provider: Arc<dyn FlowProvider>,
    frames: Vec<ActiveFrame>,
    edges: Vec<GraphEdge>,
    frame_counter: usize,
    log: Vec<(usize, Pose)>,
    flagged: BTreeSet<usize>,
}

impl std::fmt::Debug for OdometryState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OdometryState")
            .field("active", &self.frames.len())
            .field("edges", &self.edges.len())
            .field("frame_counter", &self.frame_counter)
            .field("logged", &self.log.len())
            .finish()
    }
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// New target position and weight for an edge; `None` marks it invalid.
type TargetUpdate = (Vector2<f64>, Vector2<f64>);

impl OdometryState {
    pub fn new(
        config: PipelineConfig,
        intrinsics: Intrinsics,
        width: usize,
        height: usize,
        provider: Arc<dyn FlowProvider>,
    ) -> Result<Self> {
        config.validate()?;
        intrinsics.validate()?;
        Ok(OdometryState {
            config,
            intrinsics,
            width,
            height,
            provider,
            frames: Vec::new(),
            edges: Vec::new(),
            frame_counter: 0,
            log: Vec::new(),
            flagged: BTreeSet::new(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn frames(&self) -> &[ActiveFrame] {
        &self.frames
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    /// Expected image size, `(width, height)`.
    pub fn image_size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn frame_counter(&self) -> usize {
        self.frame_counter
    }

    /// Poses of frames that left the window, in frame order.
    pub fn log(&self) -> &[(usize, Pose)] {
        &self.log
    }

    /// Frames during whose iterations bundle adjustment was singular.
    pub fn flagged(&self) -> &BTreeSet<usize> {
        &self.flagged
    }

    fn local(&self, id: usize) -> usize {
        id - self.frames[0].id
    }

    pub fn add_frame(&mut self, image: &Image) -> Result<()> {
        if image.width() != self.width || image.height() != self.height {
            return Err(Error::DimensionMismatch {
                width: self.width,
                height: self.height,
                got_width: image.width(),
                got_height: image.height(),
            });
        }
        let cfg = &self.config;
        let gray = image.to_gray();
        let features = extract_features(&gray, &cfg.features)?;
        let scores = salient_score_map(&features)?;
        let n_salient = cfg.patches_per_frame - cfg.random_patches;
        let pool = if n_salient > 0 {
            select_salient_patches(
                &scores,
                &SelectionConfig {
                    count: n_salient,
                    grid: cfg.selection_grid,
                    nms_radius: cfg.nms_radius,
                    patch_radius: cfg.patch_radius,
                },
            )?
            .centers
        } else {
            Vec::new()
        };
        let id = self.frame_counter;
        let set = build_patch_set(
            &pool,
            n_salient,
            cfg.random_patches,
            Interior {
                width: features.width(),
                height: features.height(),
                radius: cfg.patch_radius,
            },
            derive_seed(cfg.seed, &[id as u64]),
        )?;

        let pose = match self.frames.as_slice() {
            [] => Pose::identity(),
            [only] => only.pose,
            [.., prev, last] => {
                let motion = prev.pose.inverse().compose(&last.pose);
                last.pose.compose(&motion)
            }
        };
        let inv_depth = self
            .frames
            .last()
            .and_then(|f| median(&mut f.patches.iter().map(|p| p.inv_depth).collect::<Vec<_>>()))
            .unwrap_or(1.0);
        let stride = features.stride() as f64;
        let patches: Vec<Patch> = set
            .centers
            .iter()
            .map(|c| {
                let center = Vector2::new(c.col as f64 * stride, c.row as f64 * stride);
                Patch::new(id, center, cfg.patch_radius, inv_depth)
            })
            .collect();
        let labels = set.centers.iter().map(|c| c.label).collect();

        for other in &self.frames {
            if id - other.id > cfg.neighborhood {
                continue;
            }
            for k in 0..other.patches.len() {
                self.edges.push(GraphEdge::pending(Edge::new(other.id, id, k)));
            }
            for k in 0..patches.len() {
                self.edges.push(GraphEdge::pending(Edge::new(id, other.id, k)));
            }
        }
        self.frames.push(ActiveFrame {
            id,
            pose,
            features,
            patches,
            labels,
        });
        self.frame_counter += 1;
        debug_assert!(self.audit().is_ok());
        Ok(())
    }

    /// Runs `n` rounds of flow update and bundle adjustment.
    pub fn iterate(&mut self, n: usize) -> Result<()> {
        if n == 0 {
            return Ok(());
        }
        if self.frames.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "iterate needs at least 2 active frames, have {}",
                self.frames.len()
            )));
        }
        for _ in 0..n {
            self.update_flow()?;
            self.bundle_adjust()?;
        }
        debug_assert!(self.audit().is_ok());
        Ok(())
    }

    fn update_flow(&mut self) -> Result<()> {
        let needs_corr = self.provider.needs_correlation();
        let (frames, provider, k, side) = (&self.frames, &*self.provider, &self.intrinsics, self.config.grid_side);
        let base = frames[0].id;
        let n = frames.len();
        let rels: Vec<RelativeTransform> = frames
            .iter()
            .flat_map(|a| frames.iter().map(|b| RelativeTransform::between(&a.pose, &b.pose)))
            .collect();
        let updates: Vec<Result<Option<TargetUpdate>>> = self
            .edges
            .par_iter()
            .map(|ge| {
                let (s, t) = (ge.edge.source - base, ge.edge.target - base);
                let (src, tgt) = (&frames[s], &frames[t]);
                let patch = &src.patches[ge.edge.patch];
                let rel = &rels[s * n + t];
                let reprojected: Result<Vec<_>> = patch.pixels().map(|px| rel.reproject(&px, patch.inv_depth, k)).collect();
                let reprojected = match reprojected {
                    Ok(r) => r,
                    Err(Error::BehindCamera { .. }) => return Ok(None),
                    Err(e) => return Err(e),
                };
                let corr = if needs_corr {
                    Some(correlation_map(&src.features, patch, &tgt.features, &reprojected, side)?)
                } else {
                    None
                };
                let query = FlowQuery {
                    edge: ge.edge,
                    patch,
                    reprojected: &reprojected,
                    correlation: corr.as_ref(),
                };
                let update = provider.estimate(&query);
                let target = query.reprojected_center() + update.delta;
                let ok = target.x.is_finite() && target.y.is_finite() && update.confidence.iter().all(|c| *c > 0.0);
                Ok(ok.then_some((target, update.confidence)))
            })
            .collect();
        for (ge, update) in self.edges.iter_mut().zip(updates) {
            match update? {
                Some((target, weight)) => {
                    ge.target_pos = target;
                    ge.weight = weight;
                    ge.valid = true;
                }
                None => ge.valid = false,
            }
        }
        Ok(())
    }

    fn bundle_adjust(&mut self) -> Result<()> {
        let newest = self.frames.last().expect("non-empty").id;
        let mut offsets = Vec::with_capacity(self.frames.len());
        let mut patches = Vec::new();
        for (local, f) in self.frames.iter().enumerate() {
            offsets.push(patches.len());
            patches.extend(f.patches.iter().map(|p| Patch { frame_id: local, ..*p }));
        }
        let mut edges = Vec::with_capacity(self.edges.len());
        let mut targets = Vec::with_capacity(self.edges.len());
        let mut weights = Vec::with_capacity(self.edges.len());
        for ge in self.edges.iter().filter(|e| e.valid) {
            let (s, t) = (self.local(ge.edge.source), self.local(ge.edge.target));
            edges.push(Edge::new(s, t, offsets[s] + ge.edge.patch));
            targets.push(ge.target_pos);
            weights.push(ge.weight);
        }
        if edges.is_empty() {
            return Err(Error::NoValidEdges);
        }
        let fixed_poses: Vec<bool> = self
            .frames
            .iter()
            .enumerate()
            .map(|(i, f)| i == 0 || newest - f.id >= self.config.optimization_window)
            .collect();
        let mut fixed_depths = vec![false; patches.len()];
        if fixed_poses.iter().filter(|&&f| f).count() < 2 {
            // a single fixed pose leaves the monocular scale free: pin one depth
            if let Some(first) = fixed_depths.first_mut() {
                *first = true;
            }
        }
        let problem = BAProblem {
            poses: self.frames.iter().map(|f| f.pose).collect(),
            fixed_poses,
            patches,
            fixed_depths,
            edges,
            targets,
            weights,
            intrinsics: self.intrinsics,
        };
        let options = BAOptions {
            iterations: self.config.gn_iterations,
            damping: self.config.damping,
            full_patch: self.config.full_patch_residuals,
            hold_baseline: None,
        };
        match weighted_ba_with(&problem, &options) {
            Ok(sol) => {
                for (f, pose) in self.frames.iter_mut().zip(sol.poses) {
                    f.pose = pose;
                }
                for (f, &off) in self.frames.iter_mut().zip(&offsets) {
                    for (p, d) in f.patches.iter_mut().zip(&sol.inv_depths[off..]) {
                        p.inv_depth = *d;
                    }
                }
                Ok(())
            }
            Err(Error::SingularSystem { condition }) => {
                log::warn!("singular bundle adjustment at frame {newest} (condition {condition:.3e})");
                self.flagged.insert(newest);
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    /// Drops frames beyond the removal window, logging their poses.
    pub fn prune(&mut self) {
        let excess = self.frames.len().saturating_sub(self.config.removal_window);
        if excess == 0 {
            return;
        }
        for f in self.frames.drain(..excess) {
            self.log.push((f.id, f.pose));
        }
        let oldest = self.frames[0].id;
        self.edges.retain(|e| e.edge.source >= oldest && e.edge.target >= oldest);
        debug_assert!(self.frames.len() <= self.config.removal_window);
        debug_assert!(self.audit().is_ok());
    }

    /// Checks the graph invariants (the window bound holds only after
    /// [`prune`](Self::prune)): every edge references active frames and
    /// existing patches, connects frames within the neighborhood, appears
    /// once, and the edge count matches the neighborhood structure.
    pub fn audit(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidInput(format!("graph audit: {msg}")));
        for pair in self.frames.windows(2) {
            if pair[1].id != pair[0].id + 1 {
                return fail(format!("active frames {} and {} are not consecutive", pair[0].id, pair[1].id));
            }
        }
        for pair in self.log.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return fail("trajectory log is not ordered".into());
            }
        }
        let Some(first) = self.frames.first() else {
            return if self.edges.is_empty() {
                Ok(())
            } else {
                fail("edges without frames".into())
            };
        };
        let (lo, hi) = (first.id, first.id + self.frames.len());
        let mut seen = std::collections::HashSet::with_capacity(self.edges.len());
        for ge in &self.edges {
            let e = ge.edge;
            if e.source < lo || e.source >= hi || e.target < lo || e.target >= hi {
                return fail(format!("edge {e:?} references an inactive frame"));
            }
            if e.source == e.target || e.source.abs_diff(e.target) > self.config.neighborhood {
                return fail(format!("edge {e:?} is outside the neighborhood"));
            }
            if e.patch >= self.frames[e.source - lo].patches.len() {
                return fail(format!("edge {e:?} references a missing patch"));
            }
            if !seen.insert(e) {
                return fail(format!("edge {e:?} is duplicated"));
            }
        }
        let mut expected = 0;
        for a in &self.frames {
            for b in &self.frames {
                if a.id != b.id && a.id.abs_diff(b.id) <= self.config.neighborhood {
                    expected += a.patches.len();
                }
            }
        }
        if expected != self.edges.len() {
            return fail(format!("{} edges, expected {expected}", self.edges.len()));
        }
        Ok(())
    }

    /// Logged poses followed by the active ones, timestamped by frame index.
    pub fn trajectory(&self) -> Trajectory {
        let entries = self
            .log
            .iter()
            .copied()
            .chain(self.frames.iter().map(|f| (f.id, f.pose)))
            .map(|(id, pose)| (id as f64, pose))
            .collect();
        Trajectory::from_entries(entries).expect("frame ids increase")
    }
}

impl GraphEdge {
    fn pending(edge: Edge) -> Self {
        GraphEdge {
            edge,
            target_pos: Vector2::zeros(),
            weight: Vector2::repeat(1.0),
            valid: false,
        }
    }
}

/// Runs the whole loop over `frames` and returns every frame's pose.
pub fn run_sequence(
    frames: &[Image],
    config: &PipelineConfig,
    intrinsics: Intrinsics,
    provider: Arc<dyn FlowProvider>,
) -> Result<Trajectory> {
    if frames.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "run_sequence needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    let (w, h) = (frames[0].width(), frames[0].height());
    let mut state = OdometryState::new(*config, intrinsics, w, h, provider)?;
    for (t, image) in frames.iter().enumerate() {
        state.add_frame(image)?;
        if state.frames.len() >= 2 {
            state.iterate(config.iterations)?;
        }
        state.prune();
        log::debug!("frame {t}: {} active, {} edges", state.frames.len(), state.edges.len());
    }
    Ok(state.trajectory())
}
