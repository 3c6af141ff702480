use serde::{Deserialize, Serialize};

use super::FeatureMap;
use crate::error::{Error, Result};
use crate::image::Image;

pub const MIN_FEATURE_IMAGE_SIDE: usize = 16;

/// Channel order of [`extract_features`].
pub const FEATURE_CHANNELS: [&str; 6] = [
    "blurred_intensity",
    "abs_dx",
    "abs_dy",
    "grad_mag_s1",
    "grad_mag_s2",
    "local_variance",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Image pixels per feature cell (1 or 4).
    pub stride: usize,
    pub fine_sigma: f64,
    pub coarse_sigma: f64,
    /// Half-width of the variance window.
    pub variance_radius: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            stride: 1,
            fine_sigma: 1.0,
            coarse_sigma: 2.0,
            variance_radius: 2,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride != 1 && self.stride != 4 {
            return Err(Error::Config(format!(
                "feature stride must be 1 or 4, got {}",
                self.stride
            )));
        }
        if !(self.fine_sigma > 0.0 && self.coarse_sigma > 0.0) {
            return Err(Error::Config("feature blur sigmas must be positive".into()));
        }
        Ok(())
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k.into_iter().map(|v| v as f32).collect()
}

/// Separable convolution with replicated borders.
fn convolve_separable(src: &[f32], width: usize, height: usize, kernel: &[f32]) -> Vec<f32> {
    let r = (kernel.len() / 2) as i64;
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0.0f32; src.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (i, w) in kernel.iter().enumerate() {
                acc += w * src[y * width + clamp(x as i64 + i as i64 - r, width)];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0f32; src.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (i, w) in kernel.iter().enumerate() {
                acc += w * tmp[clamp(y as i64 + i as i64 - r, height) * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Central differences with replicated borders.
fn gradients(src: &[f32], width: usize, height: usize) -> (Vec<f32>, Vec<f32>) {
    let mut gx = vec![0.0f32; src.len()];
    let mut gy = vec![0.0f32; src.len()];
    for y in 0..height {
        for x in 0..width {
            let xl = x.saturating_sub(1);
            let xr = (x + 1).min(width - 1);
            let yu = y.saturating_sub(1);
            let yd = (y + 1).min(height - 1);
            gx[y * width + x] = 0.5 * (src[y * width + xr] - src[y * width + xl]);
            gy[y * width + x] = 0.5 * (src[yd * width + x] - src[yu * width + x]);
        }
    }
    (gx, gy)
}

fn local_variance(src: &[f32], width: usize, height: usize, radius: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; src.len()];
    for y in 0..height {
        let y0 = y.saturating_sub(radius);
        let y1 = (y + radius).min(height - 1);
        for x in 0..width {
            let x0 = x.saturating_sub(radius);
            let x1 = (x + radius).min(width - 1);
            let (mut s, mut s2, mut n) = (0.0f64, 0.0f64, 0.0f64);
            for yy in y0..=y1 {
                for xx in x0..=x1 {
                    let v = src[yy * width + xx] as f64;
                    s += v;
                    s2 += v * v;
                    n += 1.0;
                }
            }
            let mean = s / n;
            out[y * width + x] = (s2 / n - mean * mean).max(0.0) as f32;
        }
    }
    out
}

/// Min-max normalization to `[0, 1]`; a constant channel maps to zeros.
fn normalize(values: &mut [f32]) {
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if !(range > 0.0) {
        values.fill(0.0);
        return;
    }
    for v in values.iter_mut() {
        *v = ((*v - lo) / range).clamp(0.0, 1.0);
    }
}

/// Hand-crafted, non-negative features in `[0, 1]`: blurred intensity,
/// `|dx|`, `|dy|`, gradient magnitude at two blur scales, and local
/// variance. Uses the luma of RGB input.
pub fn extract_features(image: &Image, config: &FeatureConfig) -> Result<FeatureMap> {
    config.validate()?;
    let (w, h) = (image.width(), image.height());
    if w < MIN_FEATURE_IMAGE_SIDE || h < MIN_FEATURE_IMAGE_SIDE {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            min: MIN_FEATURE_IMAGE_SIDE,
        });
    }
    let gray = image.to_gray();
    let raw = gray.data();

    let fine = convolve_separable(raw, w, h, &gaussian_kernel(config.fine_sigma));
    let coarse = convolve_separable(raw, w, h, &gaussian_kernel(config.coarse_sigma));
    let (gx, gy) = gradients(&fine, w, h);
    let (cgx, cgy) = gradients(&coarse, w, h);

    let mut channels: Vec<Vec<f32>> = vec![
        fine.clone(),
        gx.iter().map(|v| v.abs()).collect(),
        gy.iter().map(|v| v.abs()).collect(),
        gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect(),
        cgx.iter().zip(&cgy).map(|(a, b)| a.hypot(*b)).collect(),
        local_variance(raw, w, h, config.variance_radius),
    ];

    let stride = config.stride;
    let (fh, fw) = (h / stride, w / stride);
    // subsample before normalizing so the range is that of the output map
    for ch in channels.iter_mut() {
        if stride > 1 {
            let mut sub = Vec::with_capacity(fh * fw);
            for r in 0..fh {
                for c in 0..fw {
                    sub.push(ch[r * stride * w + c * stride]);
                }
            }
            *ch = sub;
        }
        normalize(ch);
    }

    let nc = channels.len();
    let mut data = Vec::with_capacity(fh * fw * nc);
    for i in 0..fh * fw {
        for ch in &channels {
            data.push(ch[i]);
        }
    }
    FeatureMap::new(fh, fw, nc, stride, data)
}
