use crate::error::{contract, Result};

/// Real 2D image, row-major, `data[y * width + x]`. `pitch` is the pixel
/// size in units of the original detector pixel (1 unless resampled).
#[derive(Clone, Debug, PartialEq)]
pub struct FieldMap {
    pub width: usize,
    pub height: usize,
    pub pitch: f64,
    pub data: Vec<f64>,
}

impl FieldMap {
    pub fn new(width: usize, height: usize, pitch: f64, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(contract("field map needs positive dimensions"));
        }
        if data.len() != width * height {
            return Err(contract(format!(
                "field map {width}x{height} given {} values",
                data.len()
            )));
        }
        if !(pitch.is_finite() && pitch > 0.0) {
            return Err(contract(format!("pixel pitch {pitch} must be positive")));
        }
        Ok(Self {
            width,
            height,
            pitch,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pitch: 1.0,
            data: vec![0.0; width * height],
        }
    }

    /// Evaluates `f(x, y)` at every pixel center, in detector pixel units.
    pub fn from_fn(width: usize, height: usize, pitch: f64, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x as f64 * pitch, y as f64 * pitch));
            }
        }
        Self {
            width,
            height,
            pitch,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn same_shape(&self, other: &FieldMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FieldMap {
        FieldMap {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Bilinear sample at `(x, y)` in detector pixel units; coordinates are
    /// clamped to the grid.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let fx = (x / self.pitch).clamp(0.0, (self.width - 1) as f64);
        let fy = (y / self.pitch).clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - tx) + self.get(x1, y0) * tx;
        let bottom = self.get(x0, y1) * (1.0 - tx) + self.get(x1, y1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}
