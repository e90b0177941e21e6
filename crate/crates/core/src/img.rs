//! Image container: `[3, H, W]` float values in `[0, 1]`, channel planes in
//! row-major order.

use crate::tensor::Tensor;

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    tensor: Tensor,
}

impl Image {
    /// Wraps a `[3, H, W]` tensor. Panics on any other shape; values are the
    /// caller's responsibility to keep in `[0, 1]`.
    pub fn from_tensor(tensor: Tensor) -> Self {
        assert_eq!(tensor.shape().len(), 3, "image must be [3, H, W]");
        assert_eq!(tensor.shape()[0], CHANNELS, "image must have 3 channels");
        Self { tensor }
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self { tensor: Tensor::zeros(vec![CHANNELS, h, w]) }
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor {
        &mut self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        let (h, w) = (self.height(), self.width());
        self.tensor.data()[c * h * w + y * w + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let (h, w) = (self.height(), self.width());
        self.tensor.data_mut()[c * h * w + y * w + x] = v;
    }

    pub fn clamp_unit(&mut self) {
        for v in self.tensor.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
}
