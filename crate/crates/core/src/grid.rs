//! Real-valued 2D image grid shared by every stage of the pipeline.

use crate::error::{check_finite, invalid, shape_mismatch, Result};

/// Row-major real image. Width and height are at least 2 and every value is
/// finite; activity images are additionally nonnegative (see
/// [`ImageGrid::ensure_nonnegative`]).
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    /// Informational pixel pitch in millimetres.
    pub pixel_size: f64,
    values: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(invalid(format!(
                "image must be at least 2x2, got {width}x{height}"
            )));
        }
        if values.len() != width * height {
            return Err(shape_mismatch(
                format!("{} values for {width}x{height}", width * height),
                format!("{} values", values.len()),
            ));
        }
        check_finite(&values)?;
        Ok(Self {
            width,
            height,
            pixel_size: 1.0,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0.0; width * height])
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                values.push(f(col, row));
            }
        }
        Self::new(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, value: f64) {
        self.values[row * self.width + col] = value;
    }

    /// Applies `f` to every value; the result must stay finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let mut out = Self::new(self.width, self.height, self.values.iter().map(|&v| f(v)).collect())?;
        out.pixel_size = self.pixel_size;
        Ok(out)
    }

    pub fn zip_map(&self, other: &ImageGrid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.ensure_same_dims(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        let mut out = Self::new(self.width, self.height, values)?;
        out.pixel_size = self.pixel_size;
        Ok(out)
    }

    pub fn ensure_same_dims(&self, other: &ImageGrid) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(shape_mismatch(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        Ok(())
    }

    /// Rejects images with negative values (activity semantics).
    pub fn ensure_nonnegative(&self) -> Result<()> {
        match self.values.iter().position(|&v| v < 0.0) {
            Some(i) => Err(invalid(format!(
                "activity image has negative value {} at index {i}",
                self.values[i]
            ))),
            None => Ok(()),
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.values.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}
