use ndarray::{s, Array2};
use rand::Rng;

use super::block::{Block, BlockCache};
use super::layers::{gelu, gelu_grad, LayerNorm, LayerNormCache, Linear};
use super::param::{truncated_normal, Module, Param};
use super::rows::{insert_rows, insert_zero_rows, remove_rows, select_row, sum_rows};
use super::Real;
use crate::error::{Error, Result};
use crate::signal::PatchSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch: usize,
    pub channels: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub num_classes: usize,
    /// Width of an optional hidden layer in the head; 0 means a single affine layer.
    pub head_hidden: usize,
}

impl ModelConfig {
    /// CPU-sized model: 32px images, 8px patches (16 tokens), width 64, 4 blocks.
    pub fn desk(num_classes: usize) -> Self {
        Self {
            image_size: 32,
            patch: 8,
            channels: 3,
            dim: 64,
            depth: 4,
            heads: 4,
            mlp_ratio: 4.0,
            num_classes,
            head_hidden: 0,
        }
    }

    pub fn vit_base(num_classes: usize) -> Self {
        Self {
            image_size: 224,
            patch: 16,
            channels: 3,
            dim: 768,
            depth: 12,
            heads: 12,
            mlp_ratio: 4.0,
            num_classes,
            head_hidden: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadConfig(m));
        if self.depth == 0 {
            return bad("model depth must be >= 1".into());
        }
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return bad(format!("width {} not divisible by {} heads", self.dim, self.heads));
        }
        if self.patch == 0 || self.image_size == 0 || self.image_size % self.patch != 0 {
            return bad(format!("image size {} not divisible by patch {}", self.image_size, self.patch));
        }
        if self.channels == 0 || self.num_classes == 0 || !(self.mlp_ratio > 0.0) {
            return bad("channels, classes and mlp ratio must be positive".into());
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        (self.image_size / self.patch).pow(2)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.dim as f64 * self.mlp_ratio).round() as usize
    }
}

/// Closed-form parameter count of the encoder (and optionally the head).
pub fn count_parameters(cfg: &ModelConfig, include_head: bool) -> Result<usize> {
    cfg.validate()?;
    let d = cfg.dim;
    let h = cfg.mlp_hidden();
    let embed = cfg.patch_dim() * d + d;
    let tokens = d + (1 + cfg.num_patches()) * d;
    let block = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * h + h) + (h * d + d);
    let encoder = embed + tokens + cfg.depth * block + 2 * d;
    Ok(if include_head { encoder + head_parameters(cfg) } else { encoder })
}

pub(crate) fn head_parameters(cfg: &ModelConfig) -> usize {
    let (d, m) = (cfg.dim, cfg.num_classes);
    match cfg.head_hidden {
        0 => d * m + m,
        hh => d * hh + hh + hh * m + m,
    }
}

/// Prompt rows to splice into the sequence, one optional `p × d` matrix per block.
#[derive(Debug, Clone)]
pub struct PromptInput<'a, T: Real> {
    pub per_layer: Vec<Option<&'a Array2<T>>>,
    /// Let prompt outputs flow into later blocks instead of dropping them.
    pub carry: bool,
}

/// Row counts per sequence seen by each block.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EncoderTrace {
    pub block_input_rows: Vec<usize>,
    pub block_output_rows: Vec<usize>,
    pub final_rows: usize,
}

#[derive(Debug, Clone)]
pub struct EncoderOutput<T: Real> {
    /// Final-normalised sequence `[class, patches]`, `batch · len` rows.
    pub sequence: Array2<T>,
    pub batch: usize,
    pub len: usize,
    pub trace: EncoderTrace,
}

impl<T: Real> EncoderOutput<T> {
    /// Final class-token state per sample (`batch × d`).
    pub fn class_tokens(&self) -> Array2<T> {
        select_row(&self.sequence, self.batch, self.len, 0)
    }
}

#[derive(Debug, Clone)]
struct LayerRecord<T: Real> {
    /// Prompt rows in the sequence handed over by the previous block.
    prev_prompts: usize,
    /// Prompt rows in this block's input.
    in_prompts: usize,
    /// Prompt rows kept in this block's output.
    out_prompts: usize,
    inserted: bool,
    cache: BlockCache<T>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache<T: Real> {
    patches: Array2<T>,
    positions: Vec<usize>,
    batch: usize,
    tokens: usize,
    layers: Vec<LayerRecord<T>>,
    final_prompts: usize,
    final_ln: LayerNormCache<T>,
}

impl<T: Real> EncoderCache<T> {
    pub fn block_cache(&self, layer: usize) -> &BlockCache<T> {
        &self.layers[layer].cache
    }
}

/// Patch embedding, class token, learned positions, blocks and final norm.
#[derive(Debug, Clone, PartialEq)]
pub struct VitEncoder<T: Real> {
    pub config: ModelConfig,
    pub patch_embed: Linear<T>,
    pub cls_token: Param<T>,
    pub pos_embed: Param<T>,
    pub blocks: Vec<Block<T>>,
    pub norm: LayerNorm<T>,
}

impl<T: Real> VitEncoder<T> {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let patch_embed = Linear::new("encoder.patch_embed", config.patch_dim(), d, rng);
        let cls_token = Param::zeros("encoder.cls_token", 1, d);
        let pos_embed = Param::new("encoder.pos_embed", truncated_normal(1 + config.num_patches(), d, 0.02, rng));
        let blocks = (0..config.depth)
            .map(|i| Block::new(&format!("encoder.blocks.{i}"), d, config.heads, config.mlp_hidden(), rng))
            .collect();
        let norm = LayerNorm::new("encoder.norm", d);
        Ok(Self { config, patch_embed, cls_token, pos_embed, blocks, norm })
    }

    /// Linear embedding of each flattened patch, one output row per patch.
    pub fn embed_patches(&self, patches: &PatchSequence) -> Result<Array2<T>> {
        let x = patches_to_matrix::<T>(std::slice::from_ref(patches), self.config.patch_dim())?;
        Ok(self.patch_embed.forward(&x))
    }

    fn any_embedding_trainable(&self) -> bool {
        self.patch_embed.any_trainable() || self.cls_token.trainable || self.pos_embed.trainable
    }

    /// Runs the encoder on `batch` samples whose patches are stacked in
    /// `patches`; `positions[r]` is the grid index of patch row `r`.
    pub fn forward(
        &self,
        patches: &Array2<T>,
        batch: usize,
        positions: &[usize],
        prompts: Option<&PromptInput<'_, T>>,
    ) -> Result<(EncoderOutput<T>, EncoderCache<T>)> {
        let d = self.config.dim;
        if patches.ncols() != self.config.patch_dim() || batch == 0 || patches.nrows() % batch != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} patch matrix for batch {batch} and patch dim {}",
                patches.nrows(),
                patches.ncols(),
                self.config.patch_dim()
            )));
        }
        if positions.len() != patches.nrows() || positions.iter().any(|&p| p >= self.config.num_patches()) {
            return Err(Error::ShapeMismatch("patch positions do not match the patch rows".into()));
        }
        if let Some(p) = prompts {
            if p.per_layer.len() != self.config.depth || p.per_layer.iter().flatten().any(|m| m.ncols() != d) {
                return Err(Error::ConfigMismatch("prompt bank does not match encoder shape".into()));
            }
        }
        let n = patches.nrows() / batch;
        let mut tokens = self.patch_embed.forward(patches);
        for (mut row, &p) in tokens.rows_mut().into_iter().zip(positions) {
            row += &self.pos_embed.value.row(1 + p);
        }
        let cls = &self.cls_token.value + &self.pos_embed.value.slice(s![0..1, ..]);
        let mut seq = insert_rows(&tokens, batch, n, 0, &cls);

        let mut trace = EncoderTrace::default();
        let mut layers = Vec::with_capacity(self.blocks.len());
        let mut carried = 0;
        let carry = prompts.is_some_and(|p| p.carry);
        for (i, block) in self.blocks.iter().enumerate() {
            let prompt = prompts.and_then(|p| p.per_layer[i]);
            let prev_prompts = carried;
            let (input, in_prompts) = match prompt {
                Some(rows) => {
                    let stripped = remove_rows(&seq, batch, 1 + prev_prompts + n, 1, prev_prompts);
                    (insert_rows(&stripped, batch, 1 + n, 1, rows), rows.nrows())
                }
                None => (seq, prev_prompts),
            };
            let len_in = 1 + in_prompts + n;
            let (out, cache) = block.forward(&input, batch, len_in);
            let out_prompts = if prompt.is_some() && !carry { 0 } else { in_prompts };
            seq = remove_rows(&out, batch, len_in, 1, in_prompts - out_prompts);
            trace.block_input_rows.push(len_in);
            trace.block_output_rows.push(1 + out_prompts + n);
            carried = out_prompts;
            layers.push(LayerRecord { prev_prompts, in_prompts, out_prompts, inserted: prompt.is_some(), cache });
        }
        let seq = remove_rows(&seq, batch, 1 + carried + n, 1, carried);
        let (sequence, final_ln) = self.norm.forward(&seq);
        trace.final_rows = 1 + n;
        let cache = EncoderCache {
            patches: patches.clone(),
            positions: positions.to_vec(),
            batch,
            tokens: n,
            layers,
            final_prompts: carried,
            final_ln,
        };
        Ok((EncoderOutput { sequence, batch, len: 1 + n, trace }, cache))
    }

    /// Back-propagates `d_sequence` (gradient w.r.t. the final sequence).
    /// Gradients are accumulated into trainable parameters only; returns the
    /// gradient of each block's prompt rows where `prompt_trainable[i]` is set.
    /// Blocks below the lowest trainable component are skipped entirely.
    pub fn backward(
        &mut self,
        cache: &EncoderCache<T>,
        d_sequence: &Array2<T>,
        prompt_trainable: &[bool],
    ) -> Vec<Option<Array2<T>>> {
        let depth = self.blocks.len();
        let mut prompt_grads = vec![None; depth];
        let embed_trainable = self.any_embedding_trainable();
        let lowest = if embed_trainable {
            Some(0)
        } else {
            (0..depth).find(|&i| {
                self.blocks[i].any_trainable()
                    || (cache.layers[i].inserted && prompt_trainable.get(i).copied().unwrap_or(false))
            })
        };
        let norm_trainable = self.norm.gamma.trainable || self.norm.beta.trainable;
        if lowest.is_none() && !norm_trainable {
            return prompt_grads;
        }
        let (batch, n) = (cache.batch, cache.tokens);
        let d_norm = self.norm.backward(&cache.final_ln, d_sequence);
        let Some(lowest) = lowest else {
            return prompt_grads;
        };
        let mut d = insert_zero_rows(&d_norm, batch, 1 + n, 1, cache.final_prompts);
        for i in (lowest..depth).rev() {
            let rec = &cache.layers[i];
            let len_in = 1 + rec.in_prompts + n;
            let d_out = insert_zero_rows(&d, batch, 1 + rec.out_prompts + n, 1, rec.in_prompts - rec.out_prompts);
            let d_in = self.blocks[i].backward(&rec.cache, &d_out);
            d = if rec.inserted {
                if prompt_trainable.get(i).copied().unwrap_or(false) {
                    prompt_grads[i] = Some(sum_rows(&d_in, batch, len_in, 1, rec.in_prompts));
                }
                let stripped = remove_rows(&d_in, batch, len_in, 1, rec.in_prompts);
                insert_zero_rows(&stripped, batch, 1 + n, 1, rec.prev_prompts)
            } else {
                d_in
            };
        }
        if embed_trainable {
            let d_cls = sum_rows(&d, batch, 1 + n, 0, 1);
            if self.cls_token.trainable {
                self.cls_token.grad += &d_cls;
            }
            let d_tokens = remove_rows(&d, batch, 1 + n, 0, 1);
            if self.pos_embed.trainable {
                let mut row0 = self.pos_embed.grad.row_mut(0);
                row0 += &d_cls.row(0);
                for (row, &p) in d_tokens.rows().into_iter().zip(&cache.positions) {
                    let mut g = self.pos_embed.grad.row_mut(1 + p);
                    g += &row;
                }
            }
            self.patch_embed.backward(&cache.patches, &d_tokens, false);
        }
        prompt_grads
    }
}

impl<T: Real> Module<T> for VitEncoder<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.patch_embed.params();
        v.push(&self.cls_token);
        v.push(&self.pos_embed);
        for b in &self.blocks {
            v.extend(b.params());
        }
        v.extend(self.norm.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.patch_embed.params_mut();
        v.push(&mut self.cls_token);
        v.push(&mut self.pos_embed);
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        v.extend(self.norm.params_mut());
        v
    }
}

/// Stacks the patches of several images into one `(Σm) × patch_dim` matrix.
pub fn patches_to_matrix<T: Real>(seqs: &[PatchSequence], patch_dim: usize) -> Result<Array2<T>> {
    let rows: usize = seqs.iter().map(PatchSequence::len).sum();
    let mut data = Vec::with_capacity(rows * patch_dim);
    for seq in seqs {
        if seq.patch_len() != patch_dim {
            return Err(Error::ShapeMismatch(format!(
                "flattened patch length {} != expected {patch_dim}",
                seq.patch_len()
            )));
        }
        data.extend(seq.data.iter().map(|&v| T::of(v as f64)));
    }
    Ok(Array2::from_shape_vec((rows, patch_dim), data).expect("consistent shape"))
}

/// Classification head: affine map, optionally preceded by a GELU hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Head<T: Real> {
    pub hidden: Option<Linear<T>>,
    pub out: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct HeadCache<T: Real> {
    input: Array2<T>,
    pre: Option<Array2<T>>,
    act: Option<Array2<T>>,
}

impl<T: Real> Head<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        match cfg.head_hidden {
            0 => Self { hidden: None, out: Linear::new("head.fc", cfg.dim, cfg.num_classes, rng) },
            hh => Self {
                hidden: Some(Linear::new("head.hidden", cfg.dim, hh, rng)),
                out: Linear::new("head.fc", hh, cfg.num_classes, rng),
            },
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.as_ref().unwrap_or(&self.out).fan_in()
    }

    pub fn forward(&self, x: &Array2<T>) -> Result<(Array2<T>, HeadCache<T>)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!("head expects width {}, got {}", self.input_dim(), x.ncols())));
        }
        Ok(match &self.hidden {
            None => (self.out.forward(x), HeadCache { input: x.clone(), pre: None, act: None }),
            Some(hidden) => {
                let pre = hidden.forward(x);
                let act = pre.mapv(gelu);
                (self.out.forward(&act), HeadCache { input: x.clone(), pre: Some(pre), act: Some(act) })
            }
        })
    }

    /// Returns the gradient w.r.t. the head input.
    pub fn backward(&mut self, cache: &HeadCache<T>, d_logits: &Array2<T>) -> Array2<T> {
        match (&mut self.hidden, &cache.pre, &cache.act) {
            (Some(hidden), Some(pre), Some(act)) => {
                let mut da = self.out.backward(act, d_logits, true).expect("dx requested");
                ndarray::Zip::from(&mut da).and(pre).for_each(|g, &h| *g *= gelu_grad(h));
                hidden.backward(&cache.input, &da, true).expect("dx requested")
            }
            _ => self.out.backward(&cache.input, d_logits, true).expect("dx requested"),
        }
    }
}

impl<T: Real> Module<T> for Head<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.hidden.as_ref().map(Module::params).unwrap_or_default();
        v.extend(self.out.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.hidden.as_mut().map(Module::params_mut).unwrap_or_default();
        v.extend(self.out.params_mut());
        v
    }
}

/// Gradient of the class-token rows scattered back into a full sequence gradient.
pub(crate) fn scatter_class_grad<T: Real>(d_cls: &Array2<T>, batch: usize, len: usize) -> Array2<T> {
    let mut d = Array2::zeros((batch * len, d_cls.ncols()));
    for b in 0..batch {
        d.row_mut(b * len).assign(&d_cls.row(b));
    }
    d
}
