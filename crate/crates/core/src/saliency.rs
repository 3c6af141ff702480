//! Salient scores over a feature map and patch-center selection.
//!
//! The per-pixel score combines a spatial softmax over the 3x3
//! neighborhood (`alpha`) with a ratio to the strongest channel (`beta`),
//! maxed over channels. Centers are chosen by per-cell maxima, a
//! Chebyshev-radius suppression, and a top-k cut.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::correlation::FeatureMap;
use crate::error::{Error, Result};

/// `H x W` grid of salient scores.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    height: usize,
    width: usize,
    scores: Vec<f64>,
}

impl ScoreMap {
    pub fn new(height: usize, width: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != height * width {
            return Err(Error::InvalidInput(format!(
                "score map of {height}x{width} needs {} values, got {}",
                height * width,
                scores.len()
            )));
        }
        Ok(ScoreMap {
            height,
            width,
            scores,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut scores = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                scores.push(f(r, c));
            }
        }
        ScoreMap {
            height,
            width,
            scores,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.scores[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.scores[row * self.width + col] = value;
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

/// Salient score map of `features`.
///
/// When every channel of a pixel is zero the channel ratio is taken as 1
/// for the zero channels, so non-negative maps always score in `(0, 1]`.
pub fn salient_score_map(features: &FeatureMap) -> Result<ScoreMap> {
    let (h, w, c) = (features.height(), features.width(), features.channels());
    if h < 3 || w < 3 || c < 1 {
        return Err(Error::InvalidInput(format!(
            "salient scores need at least a 3x3x1 map, got {h}x{w}x{c}"
        )));
    }
    if let Some((row, col, channel)) = features.find_non_finite() {
        return Err(Error::NonFiniteFeature { row, col, channel });
    }

    // exp(F - max_h) once per value (the shift cancels in alpha), then
    // 3x3 clipped window sums per channel
    let mut shift = vec![f64::NEG_INFINITY; c];
    for cell in features.data().chunks_exact(c) {
        for (s, &v) in shift.iter_mut().zip(cell) {
            *s = s.max(v as f64);
        }
    }
    let expf: Vec<f64> = features
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| (v as f64 - shift[i % c]).exp())
        .collect();
    let mut denom = vec![0.0f64; h * w * c];
    for m in 0..h {
        for n in 0..w {
            let out = &mut denom[(m * w + n) * c..(m * w + n + 1) * c];
            for mm in m.saturating_sub(1)..=(m + 1).min(h - 1) {
                for nn in n.saturating_sub(1)..=(n + 1).min(w - 1) {
                    let src = &expf[(mm * w + nn) * c..(mm * w + nn + 1) * c];
                    for (o, s) in out.iter_mut().zip(src) {
                        *o += s;
                    }
                }
            }
        }
    }

    let mut scores = Vec::with_capacity(h * w);
    for m in 0..h {
        for n in 0..w {
            let base = (m * w + n) * c;
            let cell = features.cell(m, n);
            let channel_max = cell.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let mut best = f64::NEG_INFINITY;
            for hh in 0..c {
                let f = cell[hh] as f64;
                let alpha = expf[base + hh] / denom[base + hh];
                let beta = if channel_max == 0.0 {
                    if f == 0.0 { 1.0 } else { 0.0 }
                } else {
                    f / channel_max
                };
                best = best.max(alpha * beta);
            }
            scores.push(best);
        }
    }
    ScoreMap::new(h, w, scores)
}

/// A selected center in score-map coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredCenter {
    pub row: usize,
    pub col: usize,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    /// Number of centers to keep.
    pub count: usize,
    /// Side of the gridding cells, pixels.
    pub grid: usize,
    pub nms_radius: usize,
    /// Patch radius; centers closer than this to a border are excluded.
    pub patch_radius: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            count: 96,
            grid: 4,
            nms_radius: 4,
            patch_radius: 1,
        }
    }
}

/// Selected centers, best first. `shortfall` counts how many of the
/// requested centers could not be supplied.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub centers: Vec<ScoredCenter>,
    pub shortfall: usize,
}

/// Descending score, then `(row, col)` ascending.
fn rank(a: &ScoredCenter, b: &ScoredCenter) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.row.cmp(&b.row))
        .then(a.col.cmp(&b.col))
}

/// Grid maxima, suppression of any candidate with a strictly higher
/// candidate within Chebyshev distance `nms_radius`, then the top `count`.
pub fn select_salient_patches(scores: &ScoreMap, config: &SelectionConfig) -> Result<Selection> {
    if config.count == 0 || config.grid == 0 {
        return Err(Error::InvalidInput(
            "selection needs count >= 1 and grid >= 1".into(),
        ));
    }
    let (h, w, r) = (scores.height(), scores.width(), config.patch_radius);
    if h <= 2 * r || w <= 2 * r {
        return Ok(Selection {
            centers: Vec::new(),
            shortfall: config.count,
        });
    }
    let g = config.grid;
    let (cells_y, cells_x) = (h.div_ceil(g), w.div_ceil(g));

    // per-cell maximum among pixels inside the border margin
    let mut cell_best: Vec<Option<ScoredCenter>> = vec![None; cells_y * cells_x];
    for row in r..h - r {
        for col in r..w - r {
            let s = scores.get(row, col);
            let slot = &mut cell_best[(row / g) * cells_x + col / g];
            // row-major scan keeps the first of equal maxima
            if slot.is_none_or(|b| s > b.score) {
                *slot = Some(ScoredCenter { row, col, score: s });
            }
        }
    }

    let reach = config.nms_radius.div_ceil(g) + 1;
    let mut survivors = Vec::new();
    for cy in 0..cells_y {
        for cx in 0..cells_x {
            let Some(cand) = cell_best[cy * cells_x + cx] else {
                continue;
            };
            let mut suppressed = false;
            'scan: for ny in cy.saturating_sub(reach)..=(cy + reach).min(cells_y - 1) {
                for nx in cx.saturating_sub(reach)..=(cx + reach).min(cells_x - 1) {
                    if let Some(other) = cell_best[ny * cells_x + nx] {
                        let dist = other.row.abs_diff(cand.row).max(other.col.abs_diff(cand.col));
                        if dist <= config.nms_radius && other.score > cand.score {
                            suppressed = true;
                            break 'scan;
                        }
                    }
                }
            }
            if !suppressed {
                survivors.push(cand);
            }
        }
    }

    survivors.sort_by(rank);
    survivors.truncate(config.count);
    let shortfall = config.count - survivors.len();
    Ok(Selection {
        centers: survivors,
        shortfall,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchLabel {
    Salient,
    Random,
}

impl PatchLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            PatchLabel::Salient => "salient",
            PatchLabel::Random => "random",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledCenter {
    pub row: usize,
    pub col: usize,
    pub score: f64,
    pub label: PatchLabel,
}

/// Union of salient and random patch centers.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    pub centers: Vec<LabeledCenter>,
    /// Salient centers requested but not available in the pool.
    pub shortfall: usize,
}

impl PatchSet {
    pub fn salient(&self) -> impl Iterator<Item = &LabeledCenter> {
        self.centers.iter().filter(|c| c.label == PatchLabel::Salient)
    }

    pub fn random(&self) -> impl Iterator<Item = &LabeledCenter> {
        self.centers.iter().filter(|c| c.label == PatchLabel::Random)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Fills every center's score from `scores`.
    pub fn rescore(&mut self, scores: &ScoreMap) {
        for c in &mut self.centers {
            c.score = scores.get(c.row, c.col);
        }
    }
}

/// Region random centers are drawn from: `r <= x < width - r`,
/// `r <= y < height - r`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interior {
    pub width: usize,
    pub height: usize,
    pub radius: usize,
}

impl Interior {
    fn area(&self) -> usize {
        self.width.saturating_sub(2 * self.radius) * self.height.saturating_sub(2 * self.radius)
    }
}

/// Draws `n_salient` centers without replacement from `pool` and
/// `n_random` distinct interior centers not already chosen. Deterministic
/// in `rng_seed`.
pub fn build_patch_set(
    pool: &[ScoredCenter],
    n_salient: usize,
    n_random: usize,
    interior: Interior,
    rng_seed: u64,
) -> Result<PatchSet> {
    if pool.is_empty() && n_salient > 0 {
        return Err(Error::EmptyPool {
            requested: n_salient,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let take = n_salient.min(pool.len());
    let mut picked: Vec<usize> = index::sample(&mut rng, pool.len(), take).into_vec();
    picked.sort_unstable();
    let mut centers: Vec<LabeledCenter> = picked
        .into_iter()
        .map(|i| LabeledCenter {
            row: pool[i].row,
            col: pool[i].col,
            score: pool[i].score,
            label: PatchLabel::Salient,
        })
        .collect();

    let available = interior.area().saturating_sub(centers.len());
    let n_random = n_random.min(available);
    let mut taken: std::collections::HashSet<(usize, usize)> =
        centers.iter().map(|c| (c.row, c.col)).collect();
    let r = interior.radius;
    while centers.len() < take + n_random {
        let row = rng.random_range(r..interior.height - r);
        let col = rng.random_range(r..interior.width - r);
        if taken.insert((row, col)) {
            centers.push(LabeledCenter {
                row,
                col,
                score: 0.0,
                label: PatchLabel::Random,
            });
        }
    }
    Ok(PatchSet {
        centers,
        shortfall: n_salient - take,
    })
}
