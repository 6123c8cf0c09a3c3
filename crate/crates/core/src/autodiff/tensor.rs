use crate::error::{invalid, Result};
use crate::grid::ImageGrid;

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(invalid(format!(
                "shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// `[1, H, W]` view of an image.
    pub fn from_image(img: &ImageGrid) -> Self {
        Self {
            shape: vec![1, img.height(), img.width()],
            data: img.values().to_vec(),
        }
    }

    /// Interprets a `[.., H, W]` tensor with a single leading plane as an image.
    pub fn to_image(&self) -> Result<ImageGrid> {
        let nd = self.shape.len();
        if nd < 2 || self.shape[..nd - 2].iter().product::<usize>() != 1 {
            return Err(invalid(format!("tensor {:?} is not a single image", self.shape)));
        }
        ImageGrid::new(self.shape[nd - 1], self.shape[nd - 2], self.data.clone())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }
}
