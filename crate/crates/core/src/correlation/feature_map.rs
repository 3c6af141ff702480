use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::image::{split_coord, Image};

/// Dense `H x W x C` feature grid, row-major with channels fastest.
///
/// Feature cell `(row, col)` sits at image pixel `(col * stride, row * stride)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    stride: usize,
    data: Vec<f32>,
}

/// Result of a bilinear lookup. Out-of-bounds lookups yield zeros with
/// `in_bounds == false`.
#[derive(Clone, Debug, PartialEq)]
pub struct Lookup {
    pub values: Vec<f32>,
    pub in_bounds: bool,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, stride: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || stride == 0 {
            return Err(Error::InvalidInput(
                "feature maps need at least one channel and a positive stride".into(),
            ));
        }
        if data.len() != height * width * channels {
            return Err(Error::InvalidInput(format!(
                "feature data has {} values, expected {}",
                data.len(),
                height * width * channels
            )));
        }
        Ok(FeatureMap {
            height,
            width,
            channels,
            stride,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        FeatureMap {
            height,
            width,
            channels,
            stride: 1,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for h in 0..channels {
                    data.push(f(r, c, h));
                }
            }
        }
        FeatureMap {
            height,
            width,
            channels,
            stride: 1,
            data,
        }
    }

    /// Single-channel map from an image's first channel.
    pub fn from_image(image: &Image) -> Self {
        FeatureMap::from_fn(image.height(), image.width(), 1, |r, c, _| image.get(c, r, 0))
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        assert!(stride >= 1);
        self.stride = stride;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f32) {
        self.data[(row * self.width + col) * self.channels + channel] = value;
    }

    #[inline]
    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Image pixel -> continuous feature-grid coordinate `(x, y)`.
    #[inline]
    pub fn to_grid(&self, pixel: &Vector2<f64>) -> Vector2<f64> {
        pixel / self.stride as f64
    }

    /// First non-finite value, as `(row, col, channel)`.
    pub fn find_non_finite(&self) -> Option<(usize, usize, usize)> {
        self.data.iter().position(|v| !v.is_finite()).map(|i| {
            let channel = i % self.channels;
            let cell = i / self.channels;
            (cell / self.width, cell % self.width, channel)
        })
    }

    #[inline]
    fn grid_in_bounds(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }

    /// Bilinear lookup at a feature-grid coordinate, written into `out`.
    /// Returns false (and zeros `out`) outside `[0, W-1] x [0, H-1]`.
    pub fn lookup_grid_into(&self, x: f64, y: f64, out: &mut [f32]) -> bool {
        debug_assert_eq!(out.len(), self.channels);
        if !self.grid_in_bounds(x, y) || self.width == 0 || self.height == 0 {
            out.fill(0.0);
            return false;
        }
        let (x0, wx) = split_coord(x, self.width);
        let (y0, wy) = split_coord(y, self.height);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let w00 = ((1.0 - wx) * (1.0 - wy)) as f32;
        let w10 = (wx * (1.0 - wy)) as f32;
        let w01 = ((1.0 - wx) * wy) as f32;
        let w11 = (wx * wy) as f32;
        let (a, b, c, d) = (
            self.cell(y0, x0),
            self.cell(y0, x1),
            self.cell(y1, x0),
            self.cell(y1, x1),
        );
        for h in 0..self.channels {
            out[h] = w00 * a[h] + w10 * b[h] + w01 * c[h] + w11 * d[h];
        }
        true
    }

    /// Bilinear lookup at an image-pixel coordinate.
    pub fn lookup(&self, pixel: &Vector2<f64>) -> Lookup {
        let g = self.to_grid(pixel);
        let mut values = vec![0.0; self.channels];
        let in_bounds = self.lookup_grid_into(g.x, g.y, &mut values);
        Lookup { values, in_bounds }
    }
}
