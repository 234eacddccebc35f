//! Masked-autoencoder pretraining: the encoder sees the class token and the
//! visible patches only, a small decoder fills in mask tokens and predicts
//! pixels, and the loss is the squared error over masked pixels.

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::batch::Pipeline;
use crate::error::{Error, Result};
use crate::nn::{
    init_rng, stream_rng, truncated_normal, Block, BlockCache, EncoderCache, LayerNorm, LayerNormCache, Linear,
    ModelConfig, Module, Param, Real, VitEncoder,
};
use crate::optim::{AdamW, CosineSchedule};
use crate::signal::{ImageSample, PatchSequence};

/// Disjoint, sorted visible and masked patch indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPartition {
    pub visible: Vec<usize>,
    pub masked: Vec<usize>,
}

impl MaskPartition {
    pub fn num_patches(&self) -> usize {
        self.visible.len() + self.masked.len()
    }

    /// `true` for masked positions, indexed by patch.
    pub fn is_masked(&self) -> Vec<bool> {
        let mut flags = vec![false; self.num_patches()];
        for &i in &self.masked {
            flags[i] = true;
        }
        flags
    }
}

pub fn masked_count(m: usize, ratio: f64) -> usize {
    ((m as f64) * ratio).round() as usize
}

/// Uniform subset of `round(ratio · m)` masked patches without replacement.
pub fn random_mask<R: Rng + ?Sized>(m: usize, ratio: f64, rng: &mut R) -> Result<MaskPartition> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::RatioOutOfRange(ratio));
    }
    let k = masked_count(m, ratio);
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(rng);
    let mut masked = idx[..k].to_vec();
    let mut visible = idx[k..].to_vec();
    masked.sort_unstable();
    visible.sort_unstable();
    Ok(MaskPartition { visible, masked })
}

/// The mask of one image in one epoch, a pure function of its arguments.
pub fn mask_for(seed: u64, epoch: usize, image: usize, m: usize, ratio: f64) -> Result<MaskPartition> {
    random_mask(m, ratio, &mut stream_rng(seed, &[2, epoch as u64, image as u64]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
}

impl DecoderConfig {
    pub fn desk() -> Self {
        Self { dim: 32, depth: 2, heads: 4, mlp_ratio: 4.0 }
    }

    /// Companion to the ViT-Base encoder; used for parameter accounting only.
    pub fn base_companion() -> Self {
        Self { dim: 512, depth: 8, heads: 16, mlp_ratio: 4.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.depth == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::BadConfig(format!(
                "decoder width {} with {} heads and depth {}",
                self.dim, self.heads, self.depth
            )));
        }
        Ok(())
    }

    fn mlp_hidden(&self) -> usize {
        (self.dim as f64 * self.mlp_ratio).round() as usize
    }
}

/// Parameter count of the decoder paired with `model`.
pub fn decoder_parameters(model: &ModelConfig, dec: &DecoderConfig) -> usize {
    let (d, e, h) = (model.dim, dec.dim, dec.mlp_hidden());
    let block = 4 * e + (e * 3 * e + 3 * e) + (e * e + e) + (e * h + h) + (h * e + e);
    (d * e + e) + e + (1 + model.num_patches()) * e + dec.depth * block + 2 * e + (e * model.patch_dim() + model.patch_dim())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder<T: Real> {
    pub config: DecoderConfig,
    pub embed: Linear<T>,
    pub mask_token: Param<T>,
    pub pos_embed: Param<T>,
    pub blocks: Vec<Block<T>>,
    pub norm: LayerNorm<T>,
    pub pred: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct DecoderCache<T: Real> {
    latent: Array2<T>,
    masks: Vec<Vec<bool>>,
    blocks: Vec<BlockCache<T>>,
    norm: LayerNormCache<T>,
    normed: Array2<T>,
}

impl<T: Real> Decoder<T> {
    pub fn new<R: Rng + ?Sized>(model: &ModelConfig, config: DecoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let e = config.dim;
        let embed = Linear::new("decoder.embed", model.dim, e, rng);
        let mask_token = Param::new("decoder.mask_token", truncated_normal(1, e, 0.02, rng));
        let pos_embed = Param::new("decoder.pos_embed", truncated_normal(1 + model.num_patches(), e, 0.02, rng));
        let blocks = (0..config.depth)
            .map(|i| Block::new(&format!("decoder.blocks.{i}"), e, config.heads, config.mlp_hidden(), rng))
            .collect();
        let norm = LayerNorm::new("decoder.norm", e);
        let pred = Linear::new("decoder.pred", e, model.patch_dim(), rng);
        Ok(Self { config, embed, mask_token, pos_embed, blocks, norm, pred })
    }

    /// Maps encoder outputs `[class, visible…]` per image to a pixel
    /// prediction for every patch, `batch · m` rows in grid order.
    pub fn forward(&self, latent: &Array2<T>, masks: &[MaskPartition]) -> Result<(Array2<T>, DecoderCache<T>)> {
        let batch = masks.len();
        let m = self.pos_embed.value.nrows() - 1;
        let v = masks.first().map_or(0, |mk| mk.visible.len());
        if batch == 0 || masks.iter().any(|mk| mk.num_patches() != m || mk.visible.len() != v) {
            return Err(Error::ShapeMismatch("masks must cover the patch grid with equal visible counts".into()));
        }
        if latent.nrows() != batch * (1 + v) {
            return Err(Error::ShapeMismatch(format!("{} latent rows for {batch} images", latent.nrows())));
        }
        let projected = self.embed.forward(latent);
        let len = 1 + m;
        let e = self.config.dim;
        let mut seq = Array2::zeros((batch * len, e));
        for (b, mk) in masks.iter().enumerate() {
            let base = b * len;
            seq.row_mut(base).assign(&projected.row(b * (1 + v)));
            for (k, &j) in mk.visible.iter().enumerate() {
                seq.row_mut(base + 1 + j).assign(&projected.row(b * (1 + v) + 1 + k));
            }
            for &j in &mk.masked {
                seq.row_mut(base + 1 + j).assign(&self.mask_token.value.row(0));
            }
            let mut rows = seq.slice_mut(s![base..base + len, ..]);
            rows += &self.pos_embed.value;
        }
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (out, cache) = block.forward(&seq, batch, len);
            caches.push(cache);
            seq = out;
        }
        let (normed, norm) = self.norm.forward(&seq);
        let full = self.pred.forward(&normed);
        let pred = crate::nn::rows::remove_rows(&full, batch, len, 0, 1);
        let cache = DecoderCache { latent: latent.clone(), masks: masks.iter().map(MaskPartition::is_masked).collect(), blocks: caches, norm, normed };
        Ok((pred, cache))
    }

    /// Gradient w.r.t. the latent rows, given the gradient of the predictions.
    pub fn backward(&mut self, cache: &DecoderCache<T>, d_pred: &Array2<T>) -> Array2<T> {
        let batch = cache.masks.len();
        let m = self.pos_embed.value.nrows() - 1;
        let len = 1 + m;
        let d_full = crate::nn::rows::insert_zero_rows(d_pred, batch, m, 0, 1);
        let d_normed = self.pred.backward(&cache.normed, &d_full, true).expect("dx requested");
        let mut d = self.norm.backward(&cache.norm, &d_normed);
        for (block, bc) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            d = block.backward(bc, &d);
        }
        let v = cache.latent.nrows() / batch - 1;
        let mut d_proj = Array2::zeros((batch * (1 + v), self.config.dim));
        for (b, flags) in cache.masks.iter().enumerate() {
            let base = b * len;
            let rows = d.slice(s![base..base + len, ..]);
            if self.pos_embed.trainable {
                self.pos_embed.grad += &rows;
            }
            d_proj.row_mut(b * (1 + v)).assign(&rows.row(0));
            let mut k = 0;
            for (j, &masked) in flags.iter().enumerate() {
                if masked {
                    if self.mask_token.trainable {
                        let mut g = self.mask_token.grad.row_mut(0);
                        g += &rows.row(1 + j);
                    }
                } else {
                    d_proj.row_mut(b * (1 + v) + 1 + k).assign(&rows.row(1 + j));
                    k += 1;
                }
            }
        }
        self.embed.backward(&cache.latent, &d_proj, true).expect("dx requested")
    }
}

impl<T: Real> Module<T> for Decoder<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.embed.params();
        v.push(&self.mask_token);
        v.push(&self.pos_embed);
        for b in &self.blocks {
            v.extend(b.params());
        }
        v.extend(self.norm.params());
        v.extend(self.pred.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.embed.params_mut();
        v.push(&mut self.mask_token);
        v.push(&mut self.pos_embed);
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        v.extend(self.norm.params_mut());
        v.extend(self.pred.params_mut());
        v
    }
}

/// Mean squared error over the pixels of masked patches and its gradient
/// with respect to `pred`; visible rows receive an exactly zero gradient.
pub fn masked_mse<T: Real>(pred: &Array2<T>, target: &Array2<T>, masks: &[MaskPartition]) -> Result<(f64, Array2<T>)> {
    if pred.dim() != target.dim() || masks.is_empty() || pred.nrows() % masks.len() != 0 {
        return Err(Error::ShapeMismatch(format!("prediction {:?} vs target {:?}", pred.dim(), target.dim())));
    }
    let m = pred.nrows() / masks.len();
    let cols = pred.ncols();
    let count: usize = masks.iter().map(|mk| mk.masked.len()).sum::<usize>() * cols;
    let mut grad = Array2::zeros(pred.raw_dim());
    if count == 0 {
        return Ok((0.0, grad));
    }
    let mut sum = 0.0;
    let scale = 2.0 / count as f64;
    for (b, mk) in masks.iter().enumerate() {
        for &j in &mk.masked {
            let r = b * m + j;
            for c in 0..cols {
                let diff = pred[[r, c]].f64() - target[[r, c]].f64();
                sum += diff * diff;
                grad[[r, c]] = T::of(scale * diff);
            }
        }
    }
    Ok((sum / count as f64, grad))
}

/// Encoder plus reconstruction decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct MaeModel<T: Real> {
    pub encoder: VitEncoder<T>,
    pub decoder: Decoder<T>,
}

#[derive(Debug, Clone)]
pub struct MaeCache<T: Real> {
    encoder: EncoderCache<T>,
    decoder: DecoderCache<T>,
    /// Rows per sequence seen by the encoder blocks.
    pub encoder_len: usize,
}

#[derive(Debug, Clone)]
pub struct MaeOutput<T: Real> {
    /// Predicted pixels for every patch, `batch · m` rows.
    pub reconstruction: Array2<T>,
    pub loss: f64,
    pub d_reconstruction: Array2<T>,
}

impl<T: Real> MaeModel<T> {
    pub fn new<R: Rng + ?Sized>(model: ModelConfig, dec: DecoderConfig, rng: &mut R) -> Result<Self> {
        let encoder = VitEncoder::new(model, rng)?;
        let decoder = Decoder::new(&encoder.config, dec, rng)?;
        Ok(Self { encoder, decoder })
    }

    /// `patches` holds all `m` patches of each image; only visible ones reach the encoder.
    pub fn forward(&self, patches: &Array2<T>, masks: &[MaskPartition]) -> Result<(MaeOutput<T>, MaeCache<T>)> {
        let batch = masks.len();
        let m = self.encoder.config.num_patches();
        if batch == 0 || patches.nrows() != batch * m {
            return Err(Error::ShapeMismatch(format!("{} patch rows for {batch} masks", patches.nrows())));
        }
        let mut rows = Vec::new();
        let mut positions = Vec::new();
        for (b, mk) in masks.iter().enumerate() {
            for &j in &mk.visible {
                rows.push(b * m + j);
                positions.push(j);
            }
        }
        let visible = patches.select(ndarray::Axis(0), &rows);
        let (out, enc_cache) = self.encoder.forward(&visible, batch, &positions, None)?;
        let (reconstruction, dec_cache) = self.decoder.forward(&out.sequence, masks)?;
        let (loss, d_reconstruction) = masked_mse(&reconstruction, patches, masks)?;
        let cache = MaeCache { encoder: enc_cache, decoder: dec_cache, encoder_len: out.len };
        Ok((MaeOutput { reconstruction, loss, d_reconstruction }, cache))
    }

    pub fn backward(&mut self, cache: &MaeCache<T>, d_reconstruction: &Array2<T>) {
        let d_latent = self.decoder.backward(&cache.decoder, d_reconstruction);
        self.encoder.backward(&cache.encoder, &d_latent, &[]);
    }
}

impl<T: Real> Module<T> for MaeModel<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.encoder.params();
        v.extend(self.decoder.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.encoder.params_mut();
        v.extend(self.decoder.params_mut());
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub mask_ratio: f64,
    pub seed: u64,
    pub augment: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { epochs: 50, batch_size: 16, lr: 1e-3, weight_decay: 0.05, warmup_fraction: 0.05, mask_ratio: 0.75, seed: 0, augment: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

pub const PRETRAIN_LOG_HEADER: &str = "epoch,mean_loss,lr";

pub fn pretrain_log_csv(log: &[PretrainEpoch]) -> String {
    let mut out = format!("{PRETRAIN_LOG_HEADER}\n");
    for e in log {
        out += &format!("{},{},{}\n", e.epoch, e.mean_loss, e.lr);
    }
    out
}

/// One AdamW step on the batch given by `patches` and `masks`; returns the loss.
pub fn train_step(model: &mut MaeModel<f32>, opt: &mut AdamW<f32>, patches: &Array2<f32>, masks: &[MaskPartition], lr: f64) -> Result<f64> {
    let (out, cache) = model.forward(patches, masks)?;
    if out.loss.is_finite() {
        model.zero_grad();
        model.backward(&cache, &out.d_reconstruction);
        opt.step(&mut model.params_mut(), lr);
    }
    Ok(out.loss)
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub model: MaeModel<f32>,
    pub log: Vec<PretrainEpoch>,
    pub wall_clock_s: f64,
}

pub fn pretrain(images: &[ImageSample], model_cfg: &ModelConfig, dec_cfg: &DecoderConfig, cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    if images.is_empty() {
        return Err(Error::DatasetUnreadable("pretraining split is empty".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::BadConfig("pretraining needs positive epochs, batch size and lr".into()));
    }
    if !(0.0..=1.0).contains(&cfg.mask_ratio) {
        return Err(Error::RatioOutOfRange(cfg.mask_ratio));
    }
    let start = std::time::Instant::now();
    let mut model = MaeModel::new(model_cfg.clone(), dec_cfg.clone(), &mut init_rng(cfg.seed))?;
    let pipeline = Pipeline::new(model_cfg, cfg.augment);
    let fixed = if cfg.augment { None } else { Some(pipeline.prepare_eval(images)?) };
    let m = model_cfg.num_patches();
    let steps_per_epoch = images.len().div_ceil(cfg.batch_size);
    let schedule = CosineSchedule::new(cfg.lr, cfg.epochs * steps_per_epoch, cfg.warmup_fraction);
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let mut rng = stream_rng(cfg.seed, &[3, epoch as u64]);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = schedule.lr_at(step);
        for chunk in order.chunks(cfg.batch_size) {
            let owned: Vec<PatchSequence>;
            let refs: Vec<&PatchSequence> = match &fixed {
                Some(seqs) => chunk.iter().map(|&i| &seqs[i]).collect(),
                None => {
                    owned = chunk.iter().map(|&i| pipeline.prepare(&images[i], true, &mut rng)).collect::<Result<_>>()?;
                    owned.iter().collect()
                }
            };
            let masks: Vec<MaskPartition> =
                chunk.iter().map(|&i| mask_for(cfg.seed, epoch, i, m, cfg.mask_ratio)).collect::<Result<_>>()?;
            let x = pipeline.matrix(&refs)?;
            lr = schedule.lr_at(step);
            let loss = train_step(&mut model, &mut opt, &x, &masks, lr)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            loss_sum += loss * chunk.len() as f64;
            step += 1;
        }
        log.push(PretrainEpoch { epoch, mean_loss: loss_sum / images.len() as f64, lr });
    }
    Ok(PretrainOutcome { model, log, wall_clock_s: start.elapsed().as_secs_f64() })
}
