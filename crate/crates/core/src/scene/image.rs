use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// 8-bit RGB image, row-major interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Keeps pixel `(x * factor, y * factor)` for every output pixel `(x, y)`,
    /// matching the pixel-center convention of scaled intrinsics.
    pub fn subsample(&self, factor: usize) -> Self {
        let w = self.width / factor;
        let h = self.height / factor;
        let mut data = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                data.extend_from_slice(&self.pixel(x * factor, y * factor));
            }
        }
        Self {
            width: w,
            height: h,
            data,
        }
    }

    /// Planar `[3, H, W]` tensor with values in `[0, 1]`.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let plane = self.width * self.height;
        Tensor::from_fn(&[3, self.height, self.width], |i| {
            let c = i / plane;
            let p = i % plane;
            T::of(self.data[p * 3 + c] as f64 / 255.0)
        })
    }
}

/// Single-channel map of reals (depth or confidence).
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl ScalarMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height || width == 0 || height == 0 {
            return Err(Error::Shape(format!(
                "{width}x{height} map needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.values[i] > 0.0 && self.values[i].is_finite()
    }

    pub fn valid_count(&self) -> usize {
        (0..self.values.len()).filter(|&i| self.is_valid(i)).count()
    }

    pub fn subsample(&self, factor: usize) -> Self {
        let w = self.width / factor;
        let h = self.height / factor;
        let mut values = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                values.push(self.at(x * factor, y * factor));
            }
        }
        Self {
            width: w,
            height: h,
            values,
        }
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.len() != 2 {
            return Err(Error::Shape(format!("expected [H, W], got {s:?}")));
        }
        Self::new(s[1], s[0], t.data().iter().map(|v| v.as_f64()).collect())
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_fn(&[self.height, self.width], |i| T::of(self.values[i]))
    }
}

/// Colored points in world coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Vector3<f64>>,
    pub colors: Vec<[u8; 3]>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(&mut self, position: Vector3<f64>, color: [u8; 3]) {
        self.positions.push(position);
        self.colors.push(color);
    }
}
