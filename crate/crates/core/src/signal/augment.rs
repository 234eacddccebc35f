use rand::Rng;

use super::image::ImageSample;

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Train/eval image pipeline: resize, crop, flip and per-channel normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Side length of the intermediate resize in train mode.
    pub resize: usize,
    /// Final side length, the model's input size.
    pub crop: usize,
    pub flip_prob: f64,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { resize: 256, crop: 224, flip_prob: 0.5, mean: IMAGENET_MEAN, std: IMAGENET_STD }
    }
}

impl AugmentConfig {
    /// Keeps the 256/224 resize-to-crop ratio for a smaller input size.
    pub fn for_image_size(size: usize) -> Self {
        let resize = ((size as f64) * 256.0 / 224.0).round() as usize;
        Self { resize: resize.max(size), crop: size, ..Self::default() }
    }
}

/// Crop offsets and flip decision of one train-mode draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentDraw {
    pub top: usize,
    pub left: usize,
    pub flip: bool,
}

impl AugmentDraw {
    pub fn sample<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        let slack = cfg.resize.saturating_sub(cfg.crop);
        let top = rng.random_range(0..=slack);
        let left = rng.random_range(0..=slack);
        let flip = rng.random_bool(cfg.flip_prob);
        Self { top, left, flip }
    }
}

pub fn normalize(img: &ImageSample, cfg: &AugmentConfig) -> ImageSample {
    let mut out = img.clone();
    let c = out.channels;
    for (i, v) in out.pixels.iter_mut().enumerate() {
        let ch = (i % c) % 3;
        *v = (*v - cfg.mean[ch]) / cfg.std[ch];
    }
    out.normalized = true;
    out
}

/// Applies an explicit draw: resize to `cfg.resize`, crop, optional flip, normalise.
pub fn augment_with(img: &ImageSample, cfg: &AugmentConfig, draw: AugmentDraw) -> ImageSample {
    let resized = img.resize(cfg.resize, cfg.resize);
    let mut out = resized.crop(draw.top, draw.left, cfg.crop, cfg.crop);
    if draw.flip {
        out = out.flip_horizontal();
    }
    normalize(&out, cfg)
}

/// Train mode draws a random crop and flip from `rng`; eval mode resizes
/// straight to the crop size and only normalises.
pub fn augment_and_normalize<R: Rng + ?Sized>(
    img: &ImageSample,
    cfg: &AugmentConfig,
    train_mode: bool,
    rng: &mut R,
) -> ImageSample {
    if train_mode {
        let draw = AugmentDraw::sample(cfg, rng);
        augment_with(img, cfg, draw)
    } else {
        normalize(&img.resize(cfg.crop, cfg.crop), cfg)
    }
}
