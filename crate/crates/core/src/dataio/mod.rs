//! Dataset ingestion, image output and checkpoint persistence.

mod checkpoint;
mod cifar;
mod ppm;
mod synthetic;

pub use checkpoint::{
    checkpoint_manifest, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use cifar::{load_cifar10, parse_cifar10, CIFAR_RECORD_BYTES};
pub use ppm::{byte_to_unit, load_images, read_ppm, save_image_grid, unit_to_byte, write_ppm};
pub use synthetic::{make_synthetic, SyntheticKind};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `N×C×H×W` images with values in [−1, 1] and optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pub images: Tensor<f32>,
    pub labels: Option<Vec<u8>>,
}

impl ImageBatch {
    pub fn new(images: Tensor<f32>, labels: Option<Vec<u8>>) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::dim(format!("image batch must be N×C×H×W, got {:?}", images.shape())));
        }
        if let Some(l) = &labels {
            if l.len() != images.shape()[0] {
                return Err(Error::dim(format!("{} labels for {} images", l.len(), images.shape()[0])));
            }
        }
        if images.data().iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::contract("image values must lie in [-1, 1]"));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn resolution(&self) -> usize {
        self.images.shape()[2]
    }

    fn per_image(&self) -> usize {
        self.images.len() / self.len()
    }

    /// Gathers the listed images into a new tensor.
    pub fn select(&self, indices: &[usize]) -> Tensor<f32> {
        let per = self.per_image();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        Tensor::new(&shape, data).expect("selection shape is consistent")
    }

    /// The first `n` images (or all, if fewer).
    pub fn head(&self, n: usize) -> Tensor<f32> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }
}
