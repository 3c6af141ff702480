//! Self-supervision sequences: random homographies whose magnitude grows
//! with the frame index, appearance augmentations, superpixel occlusions
//! and exact ground-truth correspondences.

use std::collections::BTreeSet;

use nalgebra::{Matrix3, SMatrix, SVector, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::seed::derive_seed;

pub const MAX_HOMOGRAPHY_ATTEMPTS: usize = 10;
pub const MIN_OCCLUSION_IMAGE_SIDE: usize = 32;

/// A projective transform normalized so that `h22 = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Homography(Matrix3::identity())
    }

    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let h22 = m[(2, 2)];
        if !(h22.abs() > 1e-12) || m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("homography cannot be normalized".into()));
        }
        let m = m / h22;
        if !(m.determinant().abs() > 1e-9) {
            return Err(Error::InvalidInput("homography is singular".into()));
        }
        Ok(Homography(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Homography {
        let inv = self.0.try_inverse().expect("invertible by construction");
        Homography(inv / inv[(2, 2)])
    }

    /// `dehomogenize(H [p; 1])`.
    pub fn apply(&self, p: &Vector2<f64>) -> Vector2<f64> {
        let q = self.0 * Vector3::new(p.x, p.y, 1.0);
        Vector2::new(q.x / q.z, q.y / q.z)
    }

    /// Row-major entries.
    pub fn to_row_major(&self) -> [f64; 9] {
        std::array::from_fn(|k| self.0[(k / 3, k % 3)])
    }
}

/// Magnitudes at full growth (`t = N`), in resolved units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HomographySchedule {
    /// N, the frame index at which the growth factor reaches 1.
    pub length: usize,
    pub scale: f64,
    /// Radians.
    pub rotation: f64,
    /// Pixels.
    pub translation: f64,
    /// Pixels of independent jitter per corner coordinate.
    pub perspective: f64,
}

impl HomographySchedule {
    pub fn identity(length: usize) -> Self {
        HomographySchedule {
            length,
            scale: 0.0,
            rotation: 0.0,
            translation: 0.0,
            perspective: 0.0,
        }
    }

    pub fn growth(&self, t: usize) -> f64 {
        t as f64 / self.length as f64
    }
}

/// Schedule in image-relative units, as stored in configuration files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub scale: f64,
    pub rotation: f64,
    /// Fraction of `min(width, height)`.
    pub translation_frac: f64,
    /// Fraction of `min(width, height)`.
    pub perspective_frac: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            scale: 0.15,
            rotation: 0.2,
            translation_frac: 0.1,
            perspective_frac: 0.05,
        }
    }
}

impl ScheduleConfig {
    pub fn none() -> Self {
        ScheduleConfig {
            scale: 0.0,
            rotation: 0.0,
            translation_frac: 0.0,
            perspective_frac: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("scale", self.scale),
            ("rotation", self.rotation),
            ("translation_frac", self.translation_frac),
            ("perspective_frac", self.perspective_frac),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("schedule.{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.scale >= 1.0 {
            return Err(Error::Config("schedule.scale must be below 1".into()));
        }
        Ok(())
    }

    pub fn resolve(&self, length: usize, width: usize, height: usize) -> HomographySchedule {
        let side = width.min(height) as f64;
        HomographySchedule {
            length,
            scale: self.scale,
            rotation: self.rotation,
            translation: self.translation_frac * side,
            perspective: self.perspective_frac * side,
        }
    }
}

fn symmetric(rng: &mut ChaCha8Rng, a: f64) -> f64 {
    if a > 0.0 {
        rng.random_range(-a..=a)
    } else {
        0.0
    }
}

fn corners(width: usize, height: usize) -> [Vector2<f64>; 4] {
    let (w, h) = ((width - 1) as f64, (height - 1) as f64);
    [
        Vector2::new(0.0, 0.0),
        Vector2::new(w, 0.0),
        Vector2::new(w, h),
        Vector2::new(0.0, h),
    ]
}

fn is_convex(q: &[Vector2<f64>; 4]) -> bool {
    let mut sign = 0.0;
    for k in 0..4 {
        let a = q[(k + 1) % 4] - q[k];
        let b = q[(k + 2) % 4] - q[(k + 1) % 4];
        let cross = a.x * b.y - a.y * b.x;
        if cross.abs() < 1e-9 || (sign != 0.0 && cross.signum() != sign) {
            return false;
        }
        sign = cross.signum();
    }
    true
}

/// Homography taking the four `src` points onto `dst` (h22 = 1).
pub fn homography_from_points(src: &[Vector2<f64>; 4], dst: &[Vector2<f64>; 4]) -> Result<Homography> {
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for k in 0..4 {
        let (x, y) = (src[k].x, src[k].y);
        let (u, v) = (dst[k].x, dst[k].y);
        let r = 2 * k;
        a.row_mut(r).copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
        b[r] = u;
        b[r + 1] = v;
    }
    let h = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::InvalidInput("degenerate point configuration".into()))?;
    Homography::new(Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0))
}

/// Random homography for frame `t`: scale, rotation and translation about
/// the image center, then per-corner perspective jitter, all scaled by the
/// growth factor `t / N`.
pub fn sample_homography(
    t: usize,
    schedule: &HomographySchedule,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<Homography> {
    if t == 0 {
        return Err(Error::InvalidInput("frame index must be at least 1".into()));
    }
    if schedule.length == 0 {
        return Err(Error::InvalidInput("sequence length must be at least 1".into()));
    }
    if width < 2 || height < 2 {
        return Err(Error::ImageTooSmall { height, width, min: 2 });
    }
    let g = schedule.growth(t);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = Vector2::new((width - 1) as f64 / 2.0, (height - 1) as f64 / 2.0);
    let src = corners(width, height);
    for _ in 0..MAX_HOMOGRAPHY_ATTEMPTS {
        let s = 1.0 + symmetric(&mut rng, schedule.scale * g);
        let theta = symmetric(&mut rng, schedule.rotation * g);
        let tx = symmetric(&mut rng, schedule.translation * g);
        let ty = symmetric(&mut rng, schedule.translation * g);
        let jitter: [f64; 8] = std::array::from_fn(|_| symmetric(&mut rng, schedule.perspective * g));

        let (c, sn) = (theta.cos() * s, theta.sin() * s);
        // x -> s R (x - center) + center + t
        let offset = center - Vector2::new(c * center.x - sn * center.y, sn * center.x + c * center.y);
        let affine = Matrix3::new(c, -sn, offset.x + tx, sn, c, offset.y + ty, 0.0, 0.0, 1.0);
        let dst: [Vector2<f64>; 4] = std::array::from_fn(|k| {
            let p = affine * Vector3::new(src[k].x, src[k].y, 1.0);
            Vector2::new(p.x + jitter[2 * k], p.y + jitter[2 * k + 1])
        });
        if !is_convex(&dst) {
            continue;
        }
        let candidate = if schedule.perspective > 0.0 {
            homography_from_points(&src, &dst)
        } else {
            Homography::new(affine)
        };
        if let Ok(h) = candidate {
            return Ok(h);
        }
    }
    Err(Error::DegenerateHomography {
        attempts: MAX_HOMOGRAPHY_ATTEMPTS,
    })
}

// ---------------------------------------------------------------- occlusion

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcclusionConfig {
    pub enabled: bool,
    /// Requested number of superpixels.
    pub superpixels: usize,
    /// Weight of spatial distance against intensity distance.
    pub compactness: f64,
    pub iterations: usize,
    /// Largest number of adjacent superpixels merged into one region.
    pub max_superpixels: usize,
    pub min_frac: f64,
    pub max_frac: f64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        OcclusionConfig {
            enabled: true,
            superpixels: 64,
            compactness: 20.0,
            iterations: 5,
            max_superpixels: 3,
            min_frac: 0.002,
            max_frac: 0.25,
        }
    }
}

impl OcclusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.superpixels == 0 || self.iterations == 0 || self.max_superpixels == 0 {
            return Err(Error::Config(
                "occlusion superpixels, iterations and max_superpixels must be positive".into(),
            ));
        }
        if !(self.compactness > 0.0 && self.compactness.is_finite()) {
            return Err(Error::Config("occlusion.compactness must be positive".into()));
        }
        if !(0.0 <= self.min_frac && self.min_frac <= self.max_frac && self.max_frac <= 1.0) {
            return Err(Error::Config(format!(
                "occlusion fractions must satisfy 0 <= min_frac <= max_frac <= 1, got {} and {}",
                self.min_frac, self.max_frac
            )));
        }
        Ok(())
    }
}

/// Superpixel labelling, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Superpixels {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub count: usize,
    /// Seed grid: columns and rows of the initial lattice.
    pub grid: (usize, usize),
}

impl Superpixels {
    pub fn label(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// The lattice cell `(x, y)` fell into before clustering.
    pub fn grid_cell(&self, x: usize, y: usize) -> u32 {
        let (nx, ny) = self.grid;
        let gx = (x * nx / self.width).min(nx - 1);
        let gy = (y * ny / self.height).min(ny - 1);
        (gy * nx + gx) as u32
    }
}

/// Grid-seeded k-means over `(x, y, intensity)`.
pub fn slic(image: &Image, superpixels: usize, compactness: f64, iterations: usize) -> Superpixels {
    let gray = image.to_gray();
    let (w, h) = (gray.width(), gray.height());
    let step = ((w * h) as f64 / superpixels.max(1) as f64).sqrt();
    let nx = ((w as f64 / step).round() as usize).clamp(1, w);
    let ny = ((h as f64 / step).round() as usize).clamp(1, h);
    let (sx, sy) = (w as f64 / nx as f64, h as f64 / ny as f64);

    // centers: (x, y, intensity)
    let mut centers: Vec<[f64; 3]> = Vec::with_capacity(nx * ny);
    for gy in 0..ny {
        for gx in 0..nx {
            let x = (gx as f64 + 0.5) * sx - 0.5;
            let y = (gy as f64 + 0.5) * sy - 0.5;
            let (px, py) = (x.round().clamp(0.0, (w - 1) as f64), y.round().clamp(0.0, (h - 1) as f64));
            centers.push([x, y, gray.get(px as usize, py as usize, 0) as f64]);
        }
    }
    let spatial = (compactness / sx.max(sy)).powi(2);
    let (wx, wy) = (2.0 * sx, 2.0 * sy);
    let mut labels = vec![0u32; w * h];
    for _ in 0..iterations {
        for y in 0..h {
            for x in 0..w {
                let v = gray.get(x, y, 0) as f64;
                let (xf, yf) = (x as f64, y as f64);
                let mut best = (f64::INFINITY, 0u32);
                let mut fallback = (f64::INFINITY, 0u32);
                for (k, c) in centers.iter().enumerate() {
                    let (dx, dy) = (xf - c[0], yf - c[1]);
                    let d = (v - c[2]).powi(2) + spatial * (dx * dx + dy * dy);
                    if dx.abs() <= wx && dy.abs() <= wy {
                        if d < best.0 {
                            best = (d, k as u32);
                        }
                    } else if d < fallback.0 {
                        fallback = (d, k as u32);
                    }
                }
                labels[y * w + x] = if best.0.is_finite() { best.1 } else { fallback.1 };
            }
        }
        let mut acc = vec![[0.0f64; 4]; centers.len()];
        for y in 0..h {
            for x in 0..w {
                let a = &mut acc[labels[y * w + x] as usize];
                a[0] += x as f64;
                a[1] += y as f64;
                a[2] += gray.get(x, y, 0) as f64;
                a[3] += 1.0;
            }
        }
        for (c, a) in centers.iter_mut().zip(&acc) {
            if a[3] > 0.0 {
                *c = [a[0] / a[3], a[1] / a[3], a[2] / a[3]];
            }
        }
    }
    Superpixels {
        width: w,
        height: h,
        labels,
        count: centers.len(),
        grid: (nx, ny),
    }
}

/// A pixel mask in the coordinates of the image it was computed on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OcclusionRegion {
    width: usize,
    height: usize,
    mask: Vec<bool>,
}

impl OcclusionRegion {
    pub fn empty(width: usize, height: usize) -> Self {
        OcclusionRegion {
            width,
            height,
            mask: vec![false; width * height],
        }
    }

    pub fn from_mask(width: usize, height: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != width * height {
            return Err(Error::InvalidInput("mask size does not match dimensions".into()));
        }
        Ok(OcclusionRegion { width, height, mask })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn contains_pixel(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height && self.mask[y * self.width + x]
    }

    /// Membership of the nearest pixel.
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        let (x, y) = (p.x.round(), p.y.round());
        x >= 0.0 && y >= 0.0 && self.contains_pixel(x as usize, y as usize)
    }

    pub fn area(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn fraction(&self) -> f64 {
        self.area() as f64 / (self.width * self.height) as f64
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    /// Pixels within Chebyshev distance `r` of the region.
    pub fn dilated(&self, r: usize) -> OcclusionRegion {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.mask[y * self.width + x] {
                    continue;
                }
                for yy in y.saturating_sub(r)..=(y + r).min(self.height - 1) {
                    for xx in x.saturating_sub(r)..=(x + r).min(self.width - 1) {
                        out.mask[yy * self.width + xx] = true;
                    }
                }
            }
        }
        out
    }

    pub fn is_four_connected(&self) -> bool {
        match self.mask.iter().position(|&m| m) {
            None => false,
            Some(start) => flood(&self.mask, self.width, self.height, start).len() == self.area(),
        }
    }
}

/// 4-connected component of `mask` containing `start`, in visit order.
fn flood(mask: &[bool], width: usize, height: usize, start: usize) -> Vec<usize> {
    let mut seen = vec![false; mask.len()];
    let mut stack = vec![start];
    let mut out = Vec::new();
    seen[start] = true;
    while let Some(i) = stack.pop() {
        out.push(i);
        let (x, y) = (i % width, i / width);
        let mut visit = |j: usize| {
            if mask[j] && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        };
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < width {
            visit(i + 1);
        }
        if y > 0 {
            visit(i - width);
        }
        if y + 1 < height {
            visit(i + width);
        }
    }
    out
}

fn largest_component(mask: &[bool], width: usize, height: usize) -> Vec<bool> {
    let mut done = vec![false; mask.len()];
    let mut best: Vec<usize> = Vec::new();
    for i in 0..mask.len() {
        if mask[i] && !done[i] {
            let comp = flood(mask, width, height, i);
            for &j in &comp {
                done[j] = true;
            }
            if comp.len() > best.len() {
                best = comp;
            }
        }
    }
    let mut out = vec![false; mask.len()];
    for j in best {
        out[j] = true;
    }
    out
}

/// A 4-connected union of 1..=`max_superpixels` adjacent superpixels
/// whose area fraction lies in `[min_frac, max_frac]`.
pub fn superpixel_occlusion(image: &Image, seed: u64, config: &OcclusionConfig) -> Result<OcclusionRegion> {
    let (w, h) = (image.width(), image.height());
    if w < MIN_OCCLUSION_IMAGE_SIDE || h < MIN_OCCLUSION_IMAGE_SIDE {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            min: MIN_OCCLUSION_IMAGE_SIDE,
        });
    }
    let sp = slic(image, config.superpixels, config.compactness, config.iterations);
    let mut adjacency = vec![BTreeSet::new(); sp.count];
    let mut nonempty = vec![false; sp.count];
    for y in 0..h {
        for x in 0..w {
            let a = sp.label(x, y);
            nonempty[a as usize] = true;
            if x + 1 < w && sp.label(x + 1, y) != a {
                adjacency[a as usize].insert(sp.label(x + 1, y));
                adjacency[sp.label(x + 1, y) as usize].insert(a);
            }
            if y + 1 < h && sp.label(x, y + 1) != a {
                adjacency[a as usize].insert(sp.label(x, y + 1));
                adjacency[sp.label(x, y + 1) as usize].insert(a);
            }
        }
    }
    let labels: Vec<u32> = (0..sp.count as u32).filter(|&l| nonempty[l as usize]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<bool>)> = None;
    for _ in 0..32 {
        let n = rng.random_range(1..=config.max_superpixels);
        let mut chosen = BTreeSet::from([labels[rng.random_range(0..labels.len())]]);
        while chosen.len() < n {
            let frontier: Vec<u32> = chosen
                .iter()
                .flat_map(|&l| adjacency[l as usize].iter().copied())
                .filter(|l| !chosen.contains(l))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            if frontier.is_empty() {
                break;
            }
            chosen.insert(frontier[rng.random_range(0..frontier.len())]);
        }
        let raw: Vec<bool> = sp.labels.iter().map(|l| chosen.contains(l)).collect();
        let mask = largest_component(&raw, w, h);
        let frac = mask.iter().filter(|&&m| m).count() as f64 / (w * h) as f64;
        let miss = (config.min_frac - frac).max(frac - config.max_frac).max(0.0);
        if miss == 0.0 {
            return OcclusionRegion::from_mask(w, h, mask);
        }
        if best.as_ref().is_none_or(|(m, _)| miss < *m) {
            best = Some((miss, mask));
        }
    }
    // nothing landed in range; return the closest candidate
    OcclusionRegion::from_mask(w, h, best.expect("at least one attempt").1)
}

// ---------------------------------------------------------------- appearance

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Gain drawn from `[1 - gain, 1 + gain]`.
    pub gain: f64,
    /// Bias drawn from `[-bias, bias]` intensity levels.
    pub bias: f64,
    /// Chroma scale drawn from `[1 - saturation, 1 + saturation]` (RGB only).
    pub saturation: f64,
    /// Hue rotation drawn from `[-hue, hue]` radians (RGB only).
    pub hue: f64,
    /// Longest motion-blur kernel, pixels. 0 or 1 disables blur.
    pub max_blur: usize,
    pub occlusion: OcclusionConfig,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            gain: 0.2,
            bias: 20.0,
            saturation: 0.3,
            hue: 0.2,
            max_blur: 5,
            occlusion: OcclusionConfig::default(),
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            gain: 0.0,
            bias: 0.0,
            saturation: 0.0,
            hue: 0.0,
            max_blur: 0,
            occlusion: OcclusionConfig {
                enabled: false,
                ..OcclusionConfig::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gain", self.gain),
            ("bias", self.bias),
            ("saturation", self.saturation),
            ("hue", self.hue),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("augment.{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.gain >= 1.0 {
            return Err(Error::Config("augment.gain must be below 1".into()));
        }
        self.occlusion.validate()
    }
}

/// What was applied to one frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AugmentDescriptor {
    pub gain: f64,
    pub bias: f64,
    pub saturation: f64,
    pub hue: f64,
    pub blur_length: usize,
    pub blur_angle: f64,
    pub occluded_pixels: usize,
}

/// Averages `length` bilinear samples along direction `angle`, centered
/// on each pixel; samples clamp to the border.
pub fn motion_blur(image: &Image, length: usize, angle: f64) -> Image {
    if length <= 1 {
        return image.clone();
    }
    let (w, h, ch) = (image.width(), image.height(), image.channels());
    let (dx, dy) = (angle.cos(), angle.sin());
    let half = (length - 1) as f64 / 2.0;
    let mut out = image.clone();
    let inv = 1.0 / length as f32;
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0f32;
                for k in 0..length {
                    let s = k as f64 - half;
                    let sx = (x as f64 + s * dx).clamp(0.0, (w - 1) as f64);
                    let sy = (y as f64 + s * dy).clamp(0.0, (h - 1) as f64);
                    acc += image.sample_bilinear(sx, sy, c).expect("clamped");
                }
                out.set(x, y, c, acc * inv);
            }
        }
    }
    out
}

/// Rotates chroma about the gray axis by `hue` and scales it by
/// `saturation`.
fn shift_color(image: &mut Image, saturation: f64, hue: f64) {
    let (c, s) = (hue.cos(), hue.sin());
    let k = 1.0 / 3f64.sqrt();
    for px in image.data_mut().chunks_exact_mut(3) {
        let v = Vector3::new(px[0] as f64, px[1] as f64, px[2] as f64);
        let gray = (v.x + v.y + v.z) / 3.0;
        let chroma = v - Vector3::repeat(gray);
        let axis = Vector3::repeat(k);
        // Rodrigues; chroma is orthogonal to the axis
        let rotated = chroma * c + axis.cross(&chroma) * s;
        let out = Vector3::repeat(gray) + rotated * saturation;
        for i in 0..3 {
            px[i] = out[i].clamp(0.0, 255.0) as f32;
        }
    }
}

/// Result of [`apply_augmentations`].
#[derive(Clone, Debug, PartialEq)]
pub struct Augmented {
    pub image: Image,
    pub occlusion: OcclusionRegion,
    pub descriptor: AugmentDescriptor,
}

/// Gain/bias, then saturation/hue (RGB), then motion blur, then the
/// occlusion region painted with uniform noise.
pub fn apply_augmentations(image: &Image, t: usize, config: &AugmentConfig, seed: u64) -> Result<Augmented> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[t as u64]));
    let gain = 1.0 + symmetric(&mut rng, config.gain);
    let bias = symmetric(&mut rng, config.bias);
    let saturation = 1.0 + symmetric(&mut rng, config.saturation);
    let hue = symmetric(&mut rng, config.hue);
    let blur_length = if config.max_blur > 1 {
        rng.random_range(1..=config.max_blur)
    } else {
        1
    };
    let blur_angle = if blur_length > 1 {
        rng.random_range(0.0..std::f64::consts::PI)
    } else {
        0.0
    };
    let occlusion_seed: u64 = rng.random();
    let noise_seed: u64 = rng.random();

    let mut out = image.clone();
    if gain != 1.0 || bias != 0.0 {
        let (g, b) = (gain as f32, bias as f32);
        for v in out.data_mut() {
            *v = (*v * g + b).clamp(0.0, 255.0);
        }
    }
    if out.channels() == 3 && (saturation != 1.0 || hue != 0.0) {
        shift_color(&mut out, saturation, hue);
    }
    let mut out = motion_blur(&out, blur_length, blur_angle);

    let occlusion = if config.occlusion.enabled {
        superpixel_occlusion(image, occlusion_seed, &config.occlusion)?
    } else {
        OcclusionRegion::empty(image.width(), image.height())
    };
    if !occlusion.is_empty() {
        let mut noise = ChaCha8Rng::seed_from_u64(noise_seed);
        for y in 0..out.height() {
            for x in 0..out.width() {
                if occlusion.contains_pixel(x, y) {
                    for c in 0..out.channels() {
                        out.set(x, y, c, noise.random_range(0.0f32..=255.0));
                    }
                }
            }
        }
    }
    Ok(Augmented {
        image: out,
        descriptor: AugmentDescriptor {
            gain,
            bias,
            saturation,
            hue,
            blur_length,
            blur_angle,
            occluded_pixels: occlusion.area(),
        },
        occlusion,
    })
}

// ---------------------------------------------------------------- sequences

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// N, the number of generated frames.
    pub length: usize,
    pub schedule: ScheduleConfig,
    pub augment: AugmentConfig,
    /// Half-width D of the uniform displacement added to initial
    /// reprojection positions, pixels.
    pub max_displacement: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            length: 8,
            schedule: ScheduleConfig::default(),
            augment: AugmentConfig::default(),
            max_displacement: 8.0,
        }
    }
}

impl GeneratorConfig {
    /// No motion, no augmentation.
    pub fn identity(length: usize) -> Self {
        GeneratorConfig {
            length,
            schedule: ScheduleConfig::none(),
            augment: AugmentConfig::none(),
            max_displacement: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::Config("length must be at least 1".into()));
        }
        if !(self.max_displacement >= 0.0 && self.max_displacement.is_finite()) {
            return Err(Error::Config("max_displacement must be finite and >= 0".into()));
        }
        self.schedule.validate()?;
        self.augment.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HomographySequence {
    pub base: Image,
    /// `A^t(I^0)` before warping, t = 1..=N.
    pub augmented: Vec<Image>,
    /// `I^t`, t = 1..=N.
    pub frames: Vec<Image>,
    pub homographies: Vec<Homography>,
    /// Occlusion regions in base-image coordinates.
    pub occlusions: Vec<OcclusionRegion>,
    pub descriptors: Vec<AugmentDescriptor>,
}

impl HomographySequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// 255 where a frame pixel shows unoccluded base content, else 0.
    pub fn visibility_image(&self, index: usize) -> Image {
        let (w, h) = (self.base.width(), self.base.height());
        let inv = self.homographies[index].inverse();
        let occ = &self.occlusions[index];
        Image::from_fn(w, h, |x, y| {
            let p = inv.apply(&Vector2::new(x as f64, y as f64));
            if self.base.in_bounds(p.x, p.y) && !occ.contains(&p) {
                255.0
            } else {
                0.0
            }
        })
    }
}

/// Bilinear warp `out(q) = src(H^-1 q)` with zero padding.
pub fn warp_image(src: &Image, h: &Homography) -> Image {
    let inv = h.inverse();
    let (w, hh, ch) = (src.width(), src.height(), src.channels());
    let mut out = Image::new(w, hh, ch);
    for y in 0..hh {
        for x in 0..w {
            let p = inv.apply(&Vector2::new(x as f64, y as f64));
            for c in 0..ch {
                out.set(x, y, c, src.sample_bilinear(p.x, p.y, c).unwrap_or(0.0));
            }
        }
    }
    out
}

pub fn generate_sequence(base: &Image, config: &GeneratorConfig, seed: u64) -> Result<HomographySequence> {
    config.validate()?;
    let (w, h) = (base.width(), base.height());
    let schedule = config.schedule.resolve(config.length, w, h);
    let mut seq = HomographySequence {
        base: base.clone(),
        augmented: Vec::with_capacity(config.length),
        frames: Vec::with_capacity(config.length),
        homographies: Vec::with_capacity(config.length),
        occlusions: Vec::with_capacity(config.length),
        descriptors: Vec::with_capacity(config.length),
    };
    for t in 1..=config.length {
        let aug = apply_augmentations(base, t, &config.augment, derive_seed(seed, &[t as u64, 1]))?;
        let hom = sample_homography(t, &schedule, w, h, derive_seed(seed, &[t as u64, 2]))?;
        seq.frames.push(warp_image(&aug.image, &hom));
        seq.augmented.push(aug.image);
        seq.homographies.push(hom);
        seq.occlusions.push(aug.occlusion);
        seq.descriptors.push(aug.descriptor);
    }
    Ok(seq)
}

/// Visibility of point `l` in frame `t` (1-based frames).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisibilityMask {
    frames: usize,
    points: usize,
    visible: Vec<bool>,
}

impl VisibilityMask {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn get(&self, t: usize, l: usize) -> bool {
        assert!(t >= 1 && t <= self.frames, "frame index {t} out of 1..={}", self.frames);
        self.visible[(t - 1) * self.points + l]
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }
}

/// `p^t = H^t p^0` for every frame, with visibility: inside the frame and
/// outside that frame's occlusion region.
pub fn gt_correspondence(
    seq: &HomographySequence,
    points: &[Vector2<f64>],
) -> Result<(Vec<Vec<Vector2<f64>>>, VisibilityMask)> {
    for (l, p) in points.iter().enumerate() {
        if !seq.base.in_bounds(p.x, p.y) {
            return Err(Error::InvalidInput(format!("point {l} ({}, {}) is outside the base image", p.x, p.y)));
        }
    }
    let mut tracks = Vec::with_capacity(seq.len());
    let mut visible = Vec::with_capacity(seq.len() * points.len());
    for (hom, occ) in seq.homographies.iter().zip(&seq.occlusions) {
        let mapped: Vec<_> = points.iter().map(|p| hom.apply(p)).collect();
        for (p0, pt) in points.iter().zip(&mapped) {
            visible.push(pt.x.is_finite() && seq.base.in_bounds(pt.x, pt.y) && !occ.contains(p0));
        }
        tracks.push(mapped);
    }
    Ok((
        tracks,
        VisibilityMask {
            frames: seq.len(),
            points: points.len(),
            visible,
        },
    ))
}

/// Ground-truth positions plus a uniform displacement in `[-d, d]^2`.
pub fn initial_positions(targets: &[Vector2<f64>], d: f64, seed: u64) -> Vec<Vector2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    targets
        .iter()
        .map(|p| p + Vector2::new(symmetric(&mut rng, d), symmetric(&mut rng, d)))
        .collect()
}
