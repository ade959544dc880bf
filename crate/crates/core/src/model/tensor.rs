use crate::error::{Error, Result};
use crate::grid::RgbImage;

/// Dense `batch x channels x height x width` tensor of `f32`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Tensor {
            batch,
            channels,
            height,
            width,
            data: vec![0.0; batch * channels * height * width],
        }
    }

    pub fn from_vec(
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if data.len() != batch * channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {batch}x{channels}x{height}x{width} tensor",
                data.len()
            )));
        }
        Ok(Tensor {
            batch,
            channels,
            height,
            width,
            data,
        })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn item_len(&self) -> usize {
        self.channels * self.pixels()
    }

    pub fn item(&self, b: usize) -> &[f32] {
        let n = self.item_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn item_tensor(&self, b: usize) -> Tensor {
        Tensor {
            batch: 1,
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.item(b).to_vec(),
        }
    }

    /// Stacks single-item tensors of identical shape.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::EmptyInput("no tensors to stack".into()))?;
        let mut data = Vec::with_capacity(items.len() * first.item_len() * first.batch);
        let mut batch = 0;
        for t in items {
            if (t.channels, t.height, t.width) != (first.channels, first.height, first.width) {
                return Err(Error::ShapeMismatch("stacking tensors of different shapes".into()));
            }
            data.extend_from_slice(&t.data);
            batch += t.batch;
        }
        Tensor::from_vec(batch, first.channels, first.height, first.width, data)
    }

    /// Normalises an 8-bit RGB image to `[0, 1]`, one item of three channels.
    pub fn from_image(image: &RgbImage) -> Tensor {
        let n = image.len();
        let mut data = vec![0.0; 3 * n];
        for (p, px) in image.as_slice().iter().enumerate() {
            for k in 0..3 {
                data[k * n + p] = f32::from(px[k]) / 255.0;
            }
        }
        Tensor {
            batch: 1,
            channels: 3,
            height: image.height(),
            width: image.width(),
            data,
        }
    }

    pub fn from_images(images: &[&RgbImage]) -> Result<Tensor> {
        let items: Vec<Tensor> = images.iter().map(|i| Tensor::from_image(i)).collect();
        Tensor::stack(&items)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            batch: self.batch,
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(|z| crate::loss::sigmoid(f64::from(z)) as f32)
    }
}
