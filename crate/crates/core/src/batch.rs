//! Turns stored images into stacked patch matrices for the encoder.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::ModelConfig;
use crate::signal::{augment_and_normalize, patchify, AugmentConfig, ImageSample, PatchSequence};

/// Augmentation (train mode only), normalisation and patch extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub augment: AugmentConfig,
    pub patch: usize,
    pub channels: usize,
    /// Apply random crop and flip to training batches.
    pub train_augment: bool,
}

impl Pipeline {
    pub fn new(model: &ModelConfig, train_augment: bool) -> Self {
        Self {
            augment: AugmentConfig::for_image_size(model.image_size),
            patch: model.patch,
            channels: model.channels,
            train_augment,
        }
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    pub fn prepare<R: Rng + ?Sized>(&self, img: &ImageSample, train_mode: bool, rng: &mut R) -> Result<PatchSequence> {
        if img.channels != self.channels {
            return Err(Error::ShapeMismatch(format!("image has {} channels, model expects {}", img.channels, self.channels)));
        }
        let out = augment_and_normalize(img, &self.augment, train_mode && self.train_augment, rng);
        patchify(&out, self.patch)
    }

    /// Deterministic eval-mode patches for a whole split.
    pub fn prepare_eval(&self, images: &[ImageSample]) -> Result<Vec<PatchSequence>> {
        let mut rng = crate::nn::init_rng(0);
        images.iter().map(|img| self.prepare(img, false, &mut rng)).collect()
    }

    pub fn matrix(&self, seqs: &[&PatchSequence]) -> Result<Array2<f32>> {
        let dim = self.patch_dim();
        let rows: usize = seqs.iter().map(|s| s.len()).sum();
        let mut data = Vec::with_capacity(rows * dim);
        for seq in seqs {
            if seq.patch_len() != dim {
                return Err(Error::ShapeMismatch(format!("flattened patch length {} != expected {dim}", seq.patch_len())));
            }
            data.extend_from_slice(&seq.data);
        }
        Ok(Array2::from_shape_vec((rows, dim), data).expect("consistent shape"))
    }
}

pub fn labels_of(images: &[ImageSample]) -> Result<Vec<usize>> {
    images
        .iter()
        .enumerate()
        .map(|(i, img)| img.label.ok_or_else(|| Error::DatasetUnreadable(format!("sample {i} has no label"))))
        .collect()
}
