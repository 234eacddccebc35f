//! Visual prompt tuning: learnable prompt rows spliced into the frozen
//! encoder between the class token and the patch tokens.

use std::fmt;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::nn::{
    count_parameters, head_parameters, scatter_class_grad, EncoderCache, EncoderTrace, Head, HeadCache,
    ModelConfig, Module, Param, PromptInput, Real, VitEncoder,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptVariant {
    Shallow,
    Deep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertStrategy {
    BottomTop,
    TopBottom,
}

impl PromptVariant {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "shallow" => Some(Self::Shallow),
            "deep" => Some(Self::Deep),
            _ => None,
        }
    }
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Shallow => "shallow",
            Self::Deep => "deep",
        }
    }
}

impl InsertStrategy {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bottom_top" => Some(Self::BottomTop),
            "top_bottom" => Some(Self::TopBottom),
            _ => None,
        }
    }
    pub fn as_str(self) -> &'static str {
        match self {
            Self::BottomTop => "bottom_top",
            Self::TopBottom => "top_bottom",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptConfig {
    pub variant: PromptVariant,
    /// Prompt vectors per inserted layer.
    pub p: usize,
    pub strategy: InsertStrategy,
    /// Number of layers receiving prompts (deep only).
    pub depth: usize,
    /// Keep shallow prompt outputs flowing through later blocks.
    pub carry_prompt_outputs: bool,
}

impl PromptConfig {
    pub fn deep(p: usize, depth: usize) -> Self {
        Self { variant: PromptVariant::Deep, p, strategy: InsertStrategy::BottomTop, depth, carry_prompt_outputs: false }
    }

    pub fn shallow(p: usize) -> Self {
        Self { variant: PromptVariant::Shallow, p, strategy: InsertStrategy::BottomTop, depth: 1, carry_prompt_outputs: false }
    }
}

/// 1-based indices of the blocks whose input receives prompts.
pub fn select_inserted_layers(cfg: &PromptConfig, layers: usize) -> Result<Vec<usize>> {
    if cfg.variant == PromptVariant::Shallow {
        return if layers >= 1 { Ok(vec![1]) } else { Err(Error::DepthOutOfRange { depth: 1, layers }) };
    }
    if cfg.depth == 0 || cfg.depth > layers {
        return Err(Error::DepthOutOfRange { depth: cfg.depth, layers });
    }
    Ok(match cfg.strategy {
        InsertStrategy::BottomTop => (1..=cfg.depth).collect(),
        InsertStrategy::TopBottom => (layers - cfg.depth + 1..=layers).collect(),
    })
}

/// Renders a layer set as `{1,2,3}`.
pub fn format_layers(layers: &[usize]) -> String {
    let items: Vec<String> = layers.iter().map(usize::to_string).collect();
    format!("{{{}}}", items.join(","))
}

/// One `p × d` prompt matrix per inserted block.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBank<T: Real> {
    pub config: PromptConfig,
    /// 0-based block indices, parallel to `prompts`.
    pub layers: Vec<usize>,
    pub prompts: Vec<Param<T>>,
}

impl<T: Real> PromptBank<T> {
    /// Xavier-uniform initialisation over each `p × d` matrix.
    pub fn new<R: Rng + ?Sized>(config: PromptConfig, model: &ModelConfig, rng: &mut R) -> Result<Self> {
        let layers: Vec<usize> = select_inserted_layers(&config, model.depth)?.into_iter().map(|l| l - 1).collect();
        let d = model.dim;
        let bound = (6.0 / (config.p + d) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let prompts = layers
            .iter()
            .map(|&l| {
                let v = Array2::from_shape_simple_fn((config.p, d), || T::of(dist.sample(rng)));
                Param::new(format!("prompts.layer{l}"), v)
            })
            .collect();
        Ok(Self { config, layers, prompts })
    }

    pub fn input(&self, depth: usize) -> PromptInput<'_, T> {
        let mut per_layer = vec![None; depth];
        for (&l, p) in self.layers.iter().zip(&self.prompts) {
            per_layer[l] = Some(&p.value);
        }
        PromptInput { per_layer, carry: self.config.carry_prompt_outputs }
    }

    pub fn trainable_mask(&self, depth: usize) -> Vec<bool> {
        let mut mask = vec![false; depth];
        for (&l, p) in self.layers.iter().zip(&self.prompts) {
            mask[l] = p.trainable;
        }
        mask
    }

    pub fn num_prompt_params(&self) -> usize {
        self.prompts.iter().map(Param::numel).sum()
    }
}

impl<T: Real> Module<T> for PromptBank<T> {
    fn params(&self) -> Vec<&Param<T>> {
        self.prompts.iter().collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.prompts.iter_mut().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FinetuneMethod {
    FullFineTune,
    LinearProbe,
    Vpt(PromptConfig),
}

impl FinetuneMethod {
    /// Short identifier used in file names and reports.
    pub fn tag(&self) -> String {
        match self {
            Self::FullFineTune => "fft".into(),
            Self::LinearProbe => "lp".into(),
            Self::Vpt(c) => format!("vpt-{}", c.variant.as_str()),
        }
    }

    pub fn prompt_config(&self) -> Option<&PromptConfig> {
        match self {
            Self::Vpt(c) => Some(c),
            _ => None,
        }
    }
}

impl fmt::Display for FinetuneMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::FullFineTune => write!(f, "FullFineTune"),
            Self::LinearProbe => write!(f, "LinearProbe"),
            Self::Vpt(c) => write!(f, "VPT-{} (p={})", c.variant.as_str(), c.p),
        }
    }
}

/// Parameter accounting for one fine-tuning method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainableCount {
    pub prompt: usize,
    pub head: usize,
    /// Trainable encoder parameters (non-zero only for full fine-tuning).
    pub backbone: usize,
    /// Encoder plus head, the denominator of [`TrainableCount::fraction`].
    pub model_total: usize,
}

impl TrainableCount {
    /// Parameters updated during training, head included.
    pub fn trainable(&self) -> usize {
        self.prompt + self.head + self.backbone
    }

    /// Parameters the method adds or retunes on top of the shared backbone:
    /// prompts for VPT, the head for linear probing, everything for full fine-tuning.
    pub fn tuned(&self) -> usize {
        if self.prompt > 0 || (self.backbone == 0 && self.head == 0) {
            self.prompt
        } else {
            self.backbone + self.head
        }
    }

    pub fn fraction(&self) -> f64 {
        self.tuned() as f64 / self.model_total as f64
    }
}

pub fn count_trainable(method: &FinetuneMethod, model: &ModelConfig) -> Result<TrainableCount> {
    let total = count_parameters(model, true)?;
    let head = head_parameters(model);
    Ok(match method {
        FinetuneMethod::FullFineTune => {
            TrainableCount { prompt: 0, head, backbone: total - head, model_total: total }
        }
        FinetuneMethod::LinearProbe => TrainableCount { prompt: 0, head, backbone: 0, model_total: total },
        FinetuneMethod::Vpt(cfg) => {
            let layers = select_inserted_layers(cfg, model.depth)?.len();
            TrainableCount { prompt: layers * cfg.p * model.dim, head, backbone: 0, model_total: total }
        }
    })
}

/// Encoder, optional prompt bank and head evaluated as one classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier<T: Real> {
    pub encoder: VitEncoder<T>,
    pub prompts: Option<PromptBank<T>>,
    pub head: Head<T>,
}

#[derive(Debug, Clone)]
pub struct ClassifierCache<T: Real> {
    encoder: EncoderCache<T>,
    head: HeadCache<T>,
    batch: usize,
    len: usize,
    pub trace: EncoderTrace,
}

impl<T: Real> Classifier<T> {
    pub fn new<R: Rng + ?Sized>(model: ModelConfig, method: &FinetuneMethod, rng: &mut R) -> Result<Self> {
        let encoder = VitEncoder::new(model, rng)?;
        Self::from_encoder(encoder, method, rng)
    }

    /// Attaches prompts (for VPT) and a fresh head to `encoder`, then sets the
    /// trainable flags the method prescribes.
    pub fn from_encoder<R: Rng + ?Sized>(encoder: VitEncoder<T>, method: &FinetuneMethod, rng: &mut R) -> Result<Self> {
        let head = Head::new(&encoder.config, rng);
        let prompts = match method {
            FinetuneMethod::Vpt(cfg) => Some(PromptBank::new(cfg.clone(), &encoder.config, rng)?),
            _ => None,
        };
        let mut model = Self { encoder, prompts, head };
        model.apply_method(method);
        Ok(model)
    }

    pub fn apply_method(&mut self, method: &FinetuneMethod) {
        let backbone = matches!(method, FinetuneMethod::FullFineTune);
        self.encoder.set_trainable(backbone);
        self.head.set_trainable(true);
        if let Some(p) = &mut self.prompts {
            p.set_trainable(true);
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.encoder.config
    }

    /// Logits for `batch` full images whose patches are stacked row-wise.
    pub fn forward(&self, patches: &Array2<T>, batch: usize) -> Result<(Array2<T>, ClassifierCache<T>)> {
        let m = self.config().num_patches();
        if batch == 0 || patches.nrows() != batch * m {
            return Err(Error::ShapeMismatch(format!("{} patch rows for {batch} images of {m} patches", patches.nrows())));
        }
        let positions: Vec<usize> = (0..batch).flat_map(|_| 0..m).collect();
        let prompt_input = self.prompts.as_ref().map(|p| p.input(self.config().depth));
        let (out, enc_cache) = self.encoder.forward(patches, batch, &positions, prompt_input.as_ref())?;
        let (logits, head_cache) = self.head.forward(&out.class_tokens())?;
        let trace = out.trace.clone();
        Ok((logits, ClassifierCache { encoder: enc_cache, head: head_cache, batch, len: out.len, trace }))
    }

    pub fn backward(&mut self, cache: &ClassifierCache<T>, d_logits: &Array2<T>) {
        let d_cls = self.head.backward(&cache.head, d_logits);
        let depth = self.config().depth;
        let mask = self.prompts.as_ref().map(|p| p.trainable_mask(depth)).unwrap_or_else(|| vec![false; depth]);
        let d_seq = scatter_class_grad(&d_cls, cache.batch, cache.len);
        let grads = self.encoder.backward(&cache.encoder, &d_seq, &mask);
        if let Some(bank) = &mut self.prompts {
            for (&l, p) in bank.layers.iter().zip(bank.prompts.iter_mut()) {
                if let Some(g) = &grads[l] {
                    p.grad += g;
                }
            }
        }
    }
}

impl<T: Real> Module<T> for Classifier<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.encoder.params();
        if let Some(p) = &self.prompts {
            v.extend(p.params());
        }
        v.extend(self.head.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.encoder.params_mut();
        if let Some(p) = &mut self.prompts {
            v.extend(p.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }
}

/// Prompted forward pass of a frozen encoder: logits = head(x_N).
pub fn vpt_forward<T: Real>(model: &Classifier<T>, patches: &Array2<T>, batch: usize) -> Result<Array2<T>> {
    Ok(model.forward(patches, batch)?.0)
}
