//! Image datasets and training-pair assembly.

mod export;
mod glyph;
mod idx;
mod pairs;
mod transform;

use serde::{Deserialize, Serialize};

pub use export::{export_dataset, pgm_bytes, write_grid, write_pgm};
pub use glyph::{gen_glyph_dataset, GLYPH_CLASSES};
pub use idx::{encode_idx_images, encode_idx_labels, load_idx, parse_idx_images, parse_idx_labels};
pub use pairs::{make_pairs, Pair, PairBatch, PairConfig, PairSet};
pub use transform::{apply_block, rotate_image};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    SyntheticGlyph,
    IdxMnist,
}

/// `N` grayscale images in `[0, 1]`, stored contiguously, with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub source: DataSource,
    pub seed: Option<u64>,
    pixels: Vec<f32>,
    labels: Vec<u8>,
}

impl ImageDataset {
    pub fn new(
        height: usize,
        width: usize,
        num_classes: usize,
        source: DataSource,
        seed: Option<u64>,
        pixels: Vec<f32>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        let per = height * width;
        if per == 0 || pixels.len() != per * labels.len() {
            return Err(Error::Shape(format!(
                "{} pixels cannot hold {} images of {height}×{width}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::InvalidParameter(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParameter("pixel values must lie in [0, 1]".into()));
        }
        Ok(ImageDataset {
            height,
            width,
            num_classes,
            source,
            seed,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels_per_image(&self) -> usize {
        self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let p = self.pixels_per_image();
        &self.pixels[i * p..(i + 1) * p]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Images `indices` as a `[len × pixels]` matrix.
    pub fn batch(&self, indices: &[usize]) -> Tensor<f32> {
        let mut data = Vec::with_capacity(indices.len() * self.pixels_per_image());
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Tensor::new([indices.len(), self.pixels_per_image()], data).expect("batch shape")
    }

    /// Splits off the last `n` images.
    pub fn split_tail(&self, n: usize) -> Result<(ImageDataset, ImageDataset)> {
        if n >= self.len() {
            return Err(Error::InvalidParameter(format!(
                "cannot hold out {n} of {} images",
                self.len()
            )));
        }
        let cut = self.len() - n;
        let p = self.pixels_per_image();
        let part = |range: std::ops::Range<usize>| ImageDataset {
            pixels: self.pixels[range.start * p..range.end * p].to_vec(),
            labels: self.labels[range].to_vec(),
            ..self.clone_meta()
        };
        Ok((part(0..cut), part(cut..self.len())))
    }

    /// First `n` images.
    pub fn take(&self, n: usize) -> ImageDataset {
        let n = n.min(self.len());
        ImageDataset {
            pixels: self.pixels[..n * self.pixels_per_image()].to_vec(),
            labels: self.labels[..n].to_vec(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> ImageDataset {
        ImageDataset {
            height: self.height,
            width: self.width,
            num_classes: self.num_classes,
            source: self.source.clone(),
            seed: self.seed,
            pixels: Vec::new(),
            labels: Vec::new(),
        }
    }
}
