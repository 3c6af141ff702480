//! Minimal planar image container shared by the feature, generator and I/O
//! code. Intensities are stored as `f32` on a 0..=255 scale.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!(channels == 1 || channels == 3, "only gray or RGB images");
        Image {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidInput(format!(
                "unsupported channel count {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidInput(format!(
                "expected {} samples for {width}x{height}x{channels}, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Image::from_fn(width, height, |_, _| value)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn in_bounds(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }

    /// Luma (Rec. 601) for RGB, a copy for gray.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Bilinear sample of channel `c`; `None` outside `[0, W-1] x [0, H-1]`.
    pub fn sample_bilinear(&self, x: f64, y: f64, c: usize) -> Option<f32> {
        if !self.in_bounds(x, y) {
            return None;
        }
        let (x0, wx) = split_coord(x, self.width);
        let (y0, wy) = split_coord(y, self.height);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (wx, wy) = (wx as f32, wy as f32);
        let top = self.get(x0, y0, c) * (1.0 - wx) + self.get(x1, y0, c) * wx;
        let bottom = self.get(x0, y1, c) * (1.0 - wx) + self.get(x1, y1, c) * wx;
        Some(top * (1.0 - wy) + bottom * wy)
    }

    /// Samples rounded and clamped to 0..=255.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// Integer cell and fractional weight for a coordinate inside `[0, n-1]`.
#[inline]
pub(crate) fn split_coord(v: f64, n: usize) -> (usize, f64) {
    let base = v.floor();
    let mut i = base as usize;
    let mut w = v - base;
    if i + 1 >= n {
        // v == n - 1 exactly: use the last cell with full weight on its left corner
        i = n.saturating_sub(2).min(i);
        w = v - i as f64;
    }
    (i, w)
}
