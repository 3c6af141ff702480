//! Confidence-weighted bundle adjustment over world-from-camera poses and
//! per-patch inverse depths.
//!
//! Residuals are `target - reproject(center)` per edge (optionally every
//! patch pixel), weighted per axis by the edge confidence. Each iteration
//! is a Levenberg-damped Gauss-Newton step; the scalar depth blocks are
//! eliminated with a Schur complement before the dense pose solve.

use nalgebra::{DMatrix, DVector, SMatrix, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{
    reproject_pixel, Intrinsics, Patch, Pose, RelativeTransform, Twist,
};
use crate::graph::{validate_edges, Edge};

pub const MIN_INV_DEPTH: f64 = 1e-4;
pub const MAX_INV_DEPTH: f64 = 1e2;
pub const DEFAULT_DAMPING: f64 = 1e-4;
/// Reduced systems with a larger condition estimate are reported singular.
pub const CONDITION_LIMIT: f64 = 1e12;
/// Lower bound applied to the eliminated depth diagonal.
pub const DEPTH_DIAGONAL_FLOOR: f64 = 1e-8;
const STEP_TOLERANCE: f64 = 1e-12;

type Matrix6x5 = SMatrix<f64, 6, 5>;

#[derive(Clone, Debug)]
pub struct BAProblem {
    pub poses: Vec<Pose>,
    /// Poses that receive no update. At least one must be set.
    pub fixed_poses: Vec<bool>,
    /// `patch.frame_id` indexes `poses`.
    pub patches: Vec<Patch>,
    /// Depths that receive no update.
    pub fixed_depths: Vec<bool>,
    pub edges: Vec<Edge>,
    /// Estimated target position of each edge's patch center, pixels.
    pub targets: Vec<Vector2<f64>>,
    /// Per-edge, per-axis confidence.
    pub weights: Vec<Vector2<f64>>,
    pub intrinsics: Intrinsics,
}

impl BAProblem {
    /// A problem with the first pose fixed and every depth free.
    pub fn new(
        poses: Vec<Pose>,
        patches: Vec<Patch>,
        edges: Vec<Edge>,
        targets: Vec<Vector2<f64>>,
        weights: Vec<Vector2<f64>>,
        intrinsics: Intrinsics,
    ) -> Self {
        let mut fixed_poses = vec![false; poses.len()];
        if let Some(first) = fixed_poses.first_mut() {
            *first = true;
        }
        let fixed_depths = vec![false; patches.len()];
        BAProblem {
            poses,
            fixed_poses,
            patches,
            fixed_depths,
            edges,
            targets,
            weights,
            intrinsics,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        let (n, m, e) = (self.poses.len(), self.patches.len(), self.edges.len());
        if self.fixed_poses.len() != n || self.fixed_depths.len() != m {
            return Err(Error::InvalidInput("fixed flags do not match poses/patches".into()));
        }
        if self.targets.len() != e || self.weights.len() != e {
            return Err(Error::InvalidInput(format!(
                "{e} edges but {} targets and {} weights",
                self.targets.len(),
                self.weights.len()
            )));
        }
        if !self.fixed_poses.iter().any(|&f| f) {
            return Err(Error::InvalidInput("at least one pose must be fixed".into()));
        }
        validate_edges(&self.edges, n, m)?;
        for (k, p) in self.patches.iter().enumerate() {
            if p.frame_id >= n {
                return Err(Error::InvalidInput(format!("patch {k} references frame {}", p.frame_id)));
            }
            if !(p.inv_depth > 0.0 && p.inv_depth.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "patch {k} has inverse depth {}",
                    p.inv_depth
                )));
            }
        }
        for (idx, (edge, (t, w))) in self.edges.iter().zip(self.targets.iter().zip(&self.weights)).enumerate() {
            if self.patches[edge.patch].frame_id != edge.source {
                return Err(Error::InvalidInput(format!(
                    "edge {idx} starts at frame {} but its patch lives in frame {}",
                    edge.source, self.patches[edge.patch].frame_id
                )));
            }
            if !(t.x.is_finite() && t.y.is_finite()) {
                return Err(Error::InvalidInput(format!("edge {idx} has a non-finite target")));
            }
            for value in [w.x, w.y] {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(Error::NonPositiveWeight { index: idx, value });
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BAOptions {
    pub iterations: usize,
    /// Initial Levenberg damping, added to every diagonal entry.
    pub damping: f64,
    /// Residuals on every patch pixel rather than only the center.
    pub full_patch: bool,
    /// Hold the distance between the (single) fixed pose and this pose
    /// constant, fixing the monocular scale.
    pub hold_baseline: Option<usize>,
}

impl Default for BAOptions {
    fn default() -> Self {
        BAOptions {
            iterations: 2,
            damping: DEFAULT_DAMPING,
            full_patch: false,
            hold_baseline: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BASolution {
    pub poses: Vec<Pose>,
    pub inv_depths: Vec<f64>,
    pub cost: f64,
    /// Cost before the first iteration, then after each one.
    pub cost_history: Vec<f64>,
    pub converged: bool,
    /// Edges that produced a residual in the final state.
    pub valid_edges: usize,
}

/// Runs `iterations` damped Gauss-Newton steps with the default options.
pub fn weighted_ba(problem: &BAProblem, iterations: usize, damping: f64) -> Result<BASolution> {
    weighted_ba_with(
        problem,
        &BAOptions {
            iterations,
            damping,
            ..BAOptions::default()
        },
    )
}

/// Solves the joint system
/// `[Hp C; C^T diag(hd)] [dp; dd] = [bp; bd]` by eliminating the diagonal
/// depth block.
pub fn schur_solve(
    h_pose: &DMatrix<f64>,
    h_depth_diag: &DVector<f64>,
    h_coupling: &DMatrix<f64>,
    b_pose: &DVector<f64>,
    b_depth: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (p, m) = (h_pose.nrows(), h_depth_diag.len());
    if h_pose.ncols() != p || h_coupling.shape() != (p, m) || b_pose.len() != p || b_depth.len() != m {
        return Err(Error::InvalidInput("schur_solve: inconsistent block shapes".into()));
    }
    if let Some(k) = h_depth_diag.iter().position(|&h| !(h >= DEPTH_DIAGONAL_FLOOR)) {
        return Err(Error::InvalidInput(format!(
            "depth diagonal entry {k} = {} is below the floor {DEPTH_DIAGONAL_FLOOR}",
            h_depth_diag[k]
        )));
    }
    let inv_d = h_depth_diag.map(|h| 1.0 / h);

    let dp = if p == 0 {
        DVector::zeros(0)
    } else {
        // S = Hp - C D^-1 C^T, via the column-scaled coupling
        let scaled = DMatrix::from_fn(p, m, |r, c| h_coupling[(r, c)] * inv_d[c].sqrt());
        let mut s = h_pose.clone();
        s.gemm(-1.0, &scaled, &scaled.transpose(), 1.0);
        let s = (&s + s.transpose()) * 0.5;
        let rhs = b_pose - h_coupling * b_depth.component_mul(&inv_d);
        let chol = s
            .clone()
            .cholesky()
            .ok_or(Error::SingularSystem { condition: f64::INFINITY })?;
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v.abs()), hi.max(v.abs())));
        let condition = (hi / lo).powi(2);
        if !(condition <= CONDITION_LIMIT) {
            return Err(Error::SingularSystem { condition });
        }
        chol.solve(&rhs)
    };
    let dd = (b_depth - h_coupling.transpose() * &dp).component_mul(&inv_d);
    Ok((dp, dd))
}

/// How one pose enters the reduced vector.
// at most one pose per problem is constrained, so the size spread is harmless
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug)]
enum PoseVar {
    Fixed,
    Full { offset: usize },
    /// Five directions: tangent translations orthogonal to the baseline
    /// plus the three rotations.
    Constrained { offset: usize, basis: Matrix6x5 },
}

impl PoseVar {
    fn dim(&self) -> usize {
        match self {
            PoseVar::Fixed => 0,
            PoseVar::Full { .. } => 6,
            PoseVar::Constrained { .. } => 5,
        }
    }
}

struct Baseline {
    anchor: usize,
    pose: usize,
    length: f64,
}

struct State {
    poses: Vec<Pose>,
    depths: Vec<f64>,
}

struct Solver<'a> {
    problem: &'a BAProblem,
    full_patch: bool,
    /// Per edge, the target of every residual pixel (one entry unless
    /// `full_patch`). Empty when the edge could not be initialized.
    targets: Vec<Vec<Vector2<f64>>>,
    /// Residual pixels per patch when `full_patch`.
    pixels: Vec<Vec<Vector2<f64>>>,
    depth_index: Vec<Option<usize>>,
    depth_count: usize,
    baseline: Option<Baseline>,
}

impl<'a> Solver<'a> {
    fn new(problem: &'a BAProblem, options: &BAOptions) -> Result<Self> {
        let mut depth_index = Vec::with_capacity(problem.patches.len());
        let mut depth_count = 0;
        for &fixed in &problem.fixed_depths {
            if fixed {
                depth_index.push(None);
            } else {
                depth_index.push(Some(depth_count));
                depth_count += 1;
            }
        }

        let baseline = match options.hold_baseline {
            None => None,
            Some(b) => {
                let fixed: Vec<usize> = (0..problem.poses.len()).filter(|&i| problem.fixed_poses[i]).collect();
                if fixed.len() != 1 {
                    return Err(Error::Config(
                        "holding a baseline requires exactly one fixed pose".into(),
                    ));
                }
                if b >= problem.poses.len() || problem.fixed_poses[b] {
                    return Err(Error::Config(format!("baseline pose {b} must be a free pose")));
                }
                let anchor = fixed[0];
                let length = (problem.poses[b].translation() - problem.poses[anchor].translation()).norm();
                if !(length > 1e-9) {
                    return Err(Error::DegenerateGeometry(
                        "baseline pose coincides with the fixed pose".into(),
                    ));
                }
                Some(Baseline { anchor, pose: b, length })
            }
        };

        let targets = problem
            .edges
            .iter()
            .zip(&problem.targets)
            .map(|(edge, target)| {
                if !options.full_patch {
                    return vec![*target];
                }
                // every pixel keeps its initial offset from the reprojected center
                let patch = &problem.patches[edge.patch];
                let (t_i, t_j) = (&problem.poses[edge.source], &problem.poses[edge.target]);
                let k = &problem.intrinsics;
                let pixels: Result<Vec<_>> = patch
                    .pixels()
                    .map(|px| reproject_pixel(&px, patch.inv_depth, t_i, t_j, k))
                    .collect();
                match pixels {
                    Ok(px) => {
                        let center = px[patch.center_index()];
                        px.iter().map(|q| target + (q - center)).collect()
                    }
                    Err(_) => Vec::new(),
                }
            })
            .collect();

        let pixels = if options.full_patch {
            problem.patches.iter().map(|p| p.pixels().collect()).collect()
        } else {
            Vec::new()
        };
        Ok(Solver {
            problem,
            full_patch: options.full_patch,
            targets,
            pixels,
            depth_index,
            depth_count,
            baseline,
        })
    }

    fn residual_pixels(&self, patch: usize) -> &[Vector2<f64>] {
        if self.full_patch {
            &self.pixels[patch]
        } else {
            std::slice::from_ref(&self.problem.patches[patch].center)
        }
    }

    /// Relative transforms for every ordered pose pair, row-major by source.
    fn relatives(&self, state: &State) -> Vec<RelativeTransform> {
        let n = state.poses.len();
        let mut out = Vec::with_capacity(n * n);
        for t_i in &state.poses {
            for t_j in &state.poses {
                out.push(RelativeTransform::between(t_i, t_j));
            }
        }
        out
    }

    /// Weighted squared error and the number of edges that contributed.
    fn cost(&self, state: &State) -> (f64, usize) {
        let p = self.problem;
        let n = state.poses.len();
        let rels = self.relatives(state);
        let mut cost = 0.0;
        let mut valid = 0;
        for (e, edge) in p.edges.iter().enumerate() {
            if self.targets[e].is_empty() {
                continue;
            }
            let d = state.depths[edge.patch];
            let rel = &rels[edge.source * n + edge.target];
            let mut edge_cost = 0.0;
            let mut ok = true;
            for (px, target) in self.residual_pixels(edge.patch).iter().zip(&self.targets[e]) {
                match rel.reproject(px, d, &p.intrinsics) {
                    Ok(uv) => {
                        let r = target - uv;
                        edge_cost += p.weights[e].x * r.x * r.x + p.weights[e].y * r.y * r.y;
                    }
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                cost += edge_cost;
                valid += 1;
            }
        }
        (cost, valid)
    }

    fn pose_vars(&self, state: &State) -> (Vec<PoseVar>, usize) {
        let p = self.problem;
        let mut vars = Vec::with_capacity(p.poses.len());
        let mut offset = 0;
        for (i, &fixed) in p.fixed_poses.iter().enumerate() {
            let var = if fixed {
                PoseVar::Fixed
            } else if let Some(b) = self.baseline.as_ref().filter(|b| b.pose == i) {
                let dir = (state.poses[i].translation() - state.poses[b.anchor].translation()).normalize();
                let (e1, e2) = orthonormal_complement(&dir);
                let rt = state.poses[i].rotation().inverse();
                let mut basis = Matrix6x5::zeros();
                basis.fixed_view_mut::<3, 1>(0, 0).copy_from(&(rt * e1));
                basis.fixed_view_mut::<3, 1>(0, 1).copy_from(&(rt * e2));
                basis[(3, 2)] = 1.0;
                basis[(4, 3)] = 1.0;
                basis[(5, 4)] = 1.0;
                PoseVar::Constrained { offset, basis }
            } else {
                PoseVar::Full { offset }
            };
            offset += var.dim();
            vars.push(var);
        }
        (vars, offset)
    }

    /// Gauss-Newton normal equations at `state`.
    fn linearize(&self, state: &State, vars: &[PoseVar], dim: usize) -> NormalEquations {
        let p = self.problem;
        let m = self.depth_count;
        let mut ne = NormalEquations {
            hp: DMatrix::zeros(dim, dim),
            hd: DVector::zeros(m),
            c: DMatrix::zeros(dim, m),
            bp: DVector::zeros(dim),
            bd: DVector::zeros(m),
        };
        let n = state.poses.len();
        let rels = self.relatives(state);
        // reduced Jacobian columns of one residual: (variable offset, 2-vector)
        let mut cols: Vec<(usize, Vector2<f64>)> = Vec::with_capacity(12);
        let mut jacs = Vec::with_capacity(9);
        'edges: for (e, edge) in p.edges.iter().enumerate() {
            if self.targets[e].is_empty() {
                continue;
            }
            let d = state.depths[edge.patch];
            let rel = &rels[edge.source * n + edge.target];
            let w = p.weights[e];
            jacs.clear();
            for px in self.residual_pixels(edge.patch) {
                match rel.reproject_with_jacobian(px, d, &p.intrinsics) {
                    Ok(j) => jacs.push(j),
                    Err(_) => continue 'edges,
                }
            }
            for (jac, target) in jacs.iter().zip(&self.targets[e]) {
                let r = target - jac.coords;
                cols.clear();
                push_pose_columns(&mut cols, &vars[edge.source], &jac.d_pose_i);
                push_pose_columns(&mut cols, &vars[edge.target], &jac.d_pose_j);
                for (a, ja) in &cols {
                    ne.bp[*a] += w.x * ja.x * r.x + w.y * ja.y * r.y;
                    for (b, jb) in &cols {
                        ne.hp[(*a, *b)] += w.x * ja.x * jb.x + w.y * ja.y * jb.y;
                    }
                }
                if let Some(k) = self.depth_index[edge.patch] {
                    let jd = jac.d_inv_depth;
                    ne.hd[k] += w.x * jd.x * jd.x + w.y * jd.y * jd.y;
                    ne.bd[k] += w.x * jd.x * r.x + w.y * jd.y * r.y;
                    for (a, ja) in &cols {
                        ne.c[(*a, k)] += w.x * ja.x * jd.x + w.y * ja.y * jd.y;
                    }
                }
            }
        }
        ne
    }

    fn apply(&self, state: &State, vars: &[PoseVar], dp: &DVector<f64>, dd: &DVector<f64>) -> State {
        let p = self.problem;
        let mut poses: Vec<Pose> = state
            .poses
            .iter()
            .zip(vars)
            .map(|(pose, var)| match var {
                PoseVar::Fixed => *pose,
                PoseVar::Full { offset } => pose.retract(&Twist(dp.fixed_rows::<6>(*offset).into_owned())),
                PoseVar::Constrained { offset, basis } => {
                    pose.retract(&Twist(basis * dp.fixed_rows::<5>(*offset)))
                }
            })
            .collect();
        let mut depths: Vec<f64> = state
            .depths
            .iter()
            .enumerate()
            .map(|(k, &d)| match self.depth_index[k] {
                Some(i) => d + dd[i],
                None => d,
            })
            .collect();

        if let Some(b) = &self.baseline {
            // exact gauge rescale about the anchor restores the baseline
            let anchor = *poses[b.anchor].translation();
            let length = (poses[b.pose].translation() - anchor).norm();
            let f = b.length / length;
            for (i, pose) in poses.iter_mut().enumerate() {
                if !p.fixed_poses[i] {
                    *pose = Pose::new(*pose.rotation(), anchor + (pose.translation() - anchor) * f);
                }
            }
            for (k, d) in depths.iter_mut().enumerate() {
                if self.depth_index[k].is_some() {
                    *d /= f;
                }
            }
        }
        for (k, d) in depths.iter_mut().enumerate() {
            if self.depth_index[k].is_some() {
                *d = d.clamp(MIN_INV_DEPTH, MAX_INV_DEPTH);
            }
        }
        State { poses, depths }
    }
}

struct NormalEquations {
    hp: DMatrix<f64>,
    hd: DVector<f64>,
    c: DMatrix<f64>,
    bp: DVector<f64>,
    bd: DVector<f64>,
}

impl NormalEquations {
    fn solve(&self, lambda: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        let mut hp = self.hp.clone();
        for i in 0..hp.nrows() {
            hp[(i, i)] += lambda;
        }
        let hd = self.hd.map(|h| (h + lambda).max(DEPTH_DIAGONAL_FLOOR));
        schur_solve(&hp, &hd, &self.c, &self.bp, &self.bd)
    }
}

fn push_pose_columns(cols: &mut Vec<(usize, Vector2<f64>)>, var: &PoseVar, jac: &SMatrix<f64, 2, 6>) {
    match var {
        PoseVar::Fixed => {}
        PoseVar::Full { offset } => {
            for c in 0..6 {
                cols.push((offset + c, jac.column(c).into_owned()));
            }
        }
        PoseVar::Constrained { offset, basis } => {
            let reduced = jac * basis;
            for c in 0..5 {
                cols.push((offset + c, reduced.column(c).into_owned()));
            }
        }
    }
}

fn orthonormal_complement(u: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if u.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = u.cross(&helper).normalize();
    let e2 = u.cross(&e1);
    (e1, e2)
}

/// Damped Gauss-Newton with step rejection. A step that raises the cost
/// (or loses edges behind the camera) is retried once with ten times the
/// damping; damping relaxes back towards its initial value after accepted
/// steps.
pub fn weighted_ba_with(problem: &BAProblem, options: &BAOptions) -> Result<BASolution> {
    problem.validate()?;
    if !(options.damping >= 0.0 && options.damping.is_finite()) {
        return Err(Error::Config(format!("damping must be non-negative, got {}", options.damping)));
    }
    let solver = Solver::new(problem, options)?;
    let mut state = State {
        poses: problem.poses.clone(),
        depths: problem.patches.iter().map(|p| p.inv_depth).collect(),
    };
    let (mut cost, mut valid) = solver.cost(&state);
    if valid == 0 {
        return Err(Error::NoValidEdges);
    }
    let mut history = vec![cost];
    let mut lambda = options.damping;
    let mut converged = cost == 0.0;

    for _ in 0..options.iterations {
        if converged {
            break;
        }
        let (vars, dim) = solver.pose_vars(&state);
        let ne = solver.linearize(&state, &vars, dim);
        let mut accepted = false;
        let mut step = 0.0f64;
        for _attempt in 0..2 {
            let (dp, dd) = ne.solve(lambda)?;
            let candidate = solver.apply(&state, &vars, &dp, &dd);
            let (c_new, v_new) = solver.cost(&candidate);
            if c_new <= cost && v_new >= valid {
                step = dp.amax().max(dd.amax());
                state = candidate;
                cost = c_new;
                valid = v_new;
                lambda = (lambda * 0.1).max(options.damping);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        history.push(cost);
        if accepted && (step < STEP_TOLERANCE || cost == 0.0) {
            converged = true;
        }
    }

    Ok(BASolution {
        poses: state.poses,
        inv_depths: state.depths,
        cost,
        cost_history: history,
        converged,
        valid_edges: valid,
    })
}
