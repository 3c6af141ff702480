use nalgebra::Vector2;

use super::FeatureMap;
use crate::error::{Error, Result};
use crate::geometry::Patch;

/// Default side length of the integer search grid.
pub const DEFAULT_GRID_SIDE: usize = 7;

/// Dot products between each source patch pixel's feature and target
/// features sampled on an `s x s` integer grid around its reprojection.
///
/// Layout: `values[(pixel * s + v) * s + u]` where pixel follows
/// [`Patch::offsets`], `u` indexes the x offset `u - s/2` and `v` the y
/// offset `v - s/2`, both in feature-grid cells.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMap {
    pixels: usize,
    side: usize,
    stride: usize,
    values: Vec<f32>,
    valid: Vec<bool>,
}

impl CorrelationMap {
    pub fn from_parts(pixels: usize, side: usize, stride: usize, values: Vec<f32>, valid: Vec<bool>) -> Result<Self> {
        if side.is_multiple_of(2) || side == 0 {
            return Err(Error::InvalidInput(format!("grid side must be odd, got {side}")));
        }
        let n = pixels * side * side;
        if values.len() != n || valid.len() != n {
            return Err(Error::InvalidInput(format!(
                "correlation map needs {n} cells, got {} values / {} flags",
                values.len(),
                valid.len()
            )));
        }
        Ok(CorrelationMap {
            pixels,
            side,
            stride,
            values,
            valid,
        })
    }

    pub fn pixels(&self) -> usize {
        self.pixels
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn half(&self) -> i64 {
        (self.side / 2) as i64
    }

    #[inline]
    pub fn index(&self, pixel: usize, u: usize, v: usize) -> usize {
        (pixel * self.side + v) * self.side + u
    }

    pub fn get(&self, pixel: usize, u: usize, v: usize) -> f32 {
        self.values[self.index(pixel, u, v)]
    }

    pub fn is_valid(&self, pixel: usize, u: usize, v: usize) -> bool {
        self.valid[self.index(pixel, u, v)]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Sum over patch pixels, `s x s` row-major (v outer).
    pub fn summed(&self) -> Vec<f64> {
        let cells = self.side * self.side;
        let mut out = vec![0.0; cells];
        for p in 0..self.pixels {
            for (i, acc) in out.iter_mut().enumerate() {
                *acc += self.values[p * cells + i] as f64;
            }
        }
        out
    }
}

/// Builds the correlation map for one edge.
///
/// `reprojected` holds the patch pixels' positions in the target image
/// (image pixels), in [`Patch::offsets`] order.
pub fn correlation_map(
    source: &FeatureMap,
    patch: &Patch,
    target: &FeatureMap,
    reprojected: &[Vector2<f64>],
    side: usize,
) -> Result<CorrelationMap> {
    if side.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!("grid side must be odd, got {side}")));
    }
    if source.channels() != target.channels() {
        return Err(Error::InvalidInput(format!(
            "channel mismatch: source {} vs target {}",
            source.channels(),
            target.channels()
        )));
    }
    let n_pix = patch.pixel_count();
    if reprojected.len() != n_pix {
        return Err(Error::InvalidInput(format!(
            "expected {n_pix} reprojected points, got {}",
            reprojected.len()
        )));
    }
    let channels = source.channels();
    let half = (side / 2) as f64;
    let mut src_feat = vec![0.0f32; channels];
    let mut tgt_feat = vec![0.0f32; channels];
    let mut values = vec![0.0f32; n_pix * side * side];
    let mut valid = vec![false; n_pix * side * side];

    for (p, (src_px, tgt_px)) in patch.pixels().zip(reprojected).enumerate() {
        let sg = source.to_grid(&src_px);
        if !source.lookup_grid_into(sg.x, sg.y, &mut src_feat) {
            return Err(Error::InvalidInput(format!(
                "patch pixel ({}, {}) lies outside the source feature map",
                src_px.x, src_px.y
            )));
        }
        let tg = target.to_grid(tgt_px);
        for v in 0..side {
            for u in 0..side {
                let x = tg.x + u as f64 - half;
                let y = tg.y + v as f64 - half;
                let idx = (p * side + v) * side + u;
                if target.lookup_grid_into(x, y, &mut tgt_feat) {
                    values[idx] = src_feat.iter().zip(&tgt_feat).map(|(a, b)| a * b).sum();
                    valid[idx] = true;
                }
            }
        }
    }
    CorrelationMap::from_parts(n_pix, side, target.stride(), values, valid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut impl Rng, h: usize, w: usize, c: usize) -> FeatureMap {
        FeatureMap::from_fn(h, w, c, |_, _, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn self_correlation_peaks_at_zero_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_map(&mut rng, 20, 20, 8);
        // normalize each cell so self-dot dominates
        let mut f = f;
        for r in 0..20 {
            for c in 0..20 {
                let n: f32 = f.cell(r, c).iter().map(|v| v * v).sum::<f32>().sqrt();
                for h in 0..8 {
                    let v = f.get(r, c, h) / n;
                    f.set(r, c, h, v);
                }
            }
        }
        let patch = Patch::new(0, Vector2::new(10.0, 9.0), 1, 1.0);
        let reproj: Vec<_> = patch.pixels().collect();
        let corr = correlation_map(&f, &patch, &f, &reproj, 7).unwrap();
        for p in 0..9 {
            let best = (0..49)
                .max_by(|&a, &b| corr.get(p, a % 7, a / 7).partial_cmp(&corr.get(p, b % 7, b / 7)).unwrap())
                .unwrap();
            assert_eq!(best, 3 * 7 + 3);
        }
    }

    #[test]
    fn translated_copy_peaks_at_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = random_map(&mut rng, 24, 24, 6);
        // target(r, c) = source(r, c - 2): content moves +2 in x
        let shifted = FeatureMap::from_fn(24, 24, 6, |r, c, h| {
            if c >= 2 { base.get(r, c - 2, h) } else { 0.0 }
        });
        let patch = Patch::new(0, Vector2::new(11.0, 12.0), 1, 1.0);
        let reproj: Vec<_> = patch.pixels().collect();
        let corr = correlation_map(&base, &patch, &shifted, &reproj, 5).unwrap();
        let summed = corr.summed();
        let best = (0..25)
            .max_by(|&a, &b| summed[a].partial_cmp(&summed[b]).unwrap())
            .unwrap();
        assert_eq!((best % 5) as i64 - 2, 2);
        assert_eq!((best / 5) as i64 - 2, 0);
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = random_map(&mut rng, 12, 14, 3);
            let b = random_map(&mut rng, 12, 14, 3);
            let patch = Patch::new(0, Vector2::new(rng.random_range(2..11) as f64, rng.random_range(2..9) as f64), 1, 1.0);
            let reproj: Vec<_> = patch
                .pixels()
                .map(|p| p + Vector2::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)))
                .collect();
            let corr = correlation_map(&a, &patch, &b, &reproj, 3).unwrap();
            for (p, (src, tgt)) in patch.pixels().zip(&reproj).enumerate() {
                for v in 0..3 {
                    for u in 0..3 {
                        let x = tgt.x + u as f64 - 1.0;
                        let y = tgt.y + v as f64 - 1.0;
                        let inside = x >= 0.0 && y >= 0.0 && x <= 13.0 && y <= 11.0;
                        assert_eq!(corr.is_valid(p, u, v), inside);
                        let mut expected = 0.0f64;
                        if inside {
                            let (x0, y0) = (x.floor() as usize, y.floor() as usize);
                            let (x1, y1) = ((x0 + 1).min(13), (y0 + 1).min(11));
                            let (ax, ay) = (x - x0 as f64, y - y0 as f64);
                            for h in 0..3 {
                                let t = (1.0 - ax) * (1.0 - ay) * b.get(y0, x0, h) as f64
                                    + ax * (1.0 - ay) * b.get(y0, x1, h) as f64
                                    + (1.0 - ax) * ay * b.get(y1, x0, h) as f64
                                    + ax * ay * b.get(y1, x1, h) as f64;
                                expected += t * a.get(src.y as usize, src.x as usize, h) as f64;
                            }
                        }
                        assert!((corr.get(p, u, v) as f64 - expected).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn even_side_rejected() {
        let f = FeatureMap::zeros(8, 8, 1);
        let patch = Patch::new(0, Vector2::new(4.0, 4.0), 0, 1.0);
        assert!(correlation_map(&f, &patch, &f, &[patch.center], 4).is_err());
    }
}
