//! Supervised fine-tuning: cross-entropy, the SGD training loop with
//! best-validation selection, and the learning-rate/weight-decay grid search.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;

use crate::batch::{labels_of, Pipeline};
use crate::error::{Error, Result};
use crate::nn::{stream_rng, Module, Real, VitEncoder};
use crate::optim::{scaled_lr, CosineSchedule, Sgd};
use crate::signal::{ImageSample, PatchSequence};
use crate::vpt::{Classifier, FinetuneMethod};

/// Mean negative log-likelihood of the true class and its gradient with
/// respect to the logits, `(softmax − onehot) / B`.
pub fn cross_entropy<T: Real>(logits: &Array2<T>, labels: &[usize]) -> Result<(f64, Array2<T>)> {
    let (b, classes) = logits.dim();
    if labels.len() != b {
        return Err(Error::ShapeMismatch(format!("{} labels for {b} logit rows", labels.len())));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let mut grad = Array2::zeros((b, classes));
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v.f64() - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[y].f64();
        for (c, v) in row.iter().enumerate() {
            let p = (v.f64() - log_z).exp();
            let target = if c == y { 1.0 } else { 0.0 };
            grad[[i, c]] = T::of((p - target) / b as f64);
        }
    }
    Ok((total / b as f64, grad))
}

pub fn argmax_rows<T: Real>(logits: &Array2<T>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (i, v) in r.iter().enumerate() {
                if *v > r[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Scaled by `batch_size / 256` to obtain the peak learning rate.
    pub base_lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Random crop and flip on training batches.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 16, base_lr: 0.5, weight_decay: 0.0, momentum: 0.9, seed: 0, augment: true }
    }
}

impl TrainConfig {
    pub fn peak_lr(&self) -> f64 {
        scaled_lr(self.base_lr, self.batch_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::BadConfig("epochs and batch size must be positive".into()));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::BadConfig(format!("invalid base_lr {} or weight_decay {}", self.base_lr, self.weight_decay)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub lr: f64,
}

pub const EPOCH_LOG_HEADER: &str = "epoch,train_loss,train_acc,val_acc,lr";

pub fn epoch_log_csv(log: &[EpochLog]) -> String {
    let mut out = format!("{EPOCH_LOG_HEADER}\n");
    for e in log {
        out += &format!("{},{},{},{},{}\n", e.epoch, e.train_loss, e.train_acc, e.val_acc, e.lr);
    }
    out
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    /// Parameters from the epoch with the highest validation accuracy.
    pub model: Classifier<f32>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub log: Vec<EpochLog>,
    pub wall_clock_s: f64,
}

/// Class predictions for a prepared split, evaluated in fixed-size chunks.
pub fn predict(model: &Classifier<f32>, pipeline: &Pipeline, seqs: &[PatchSequence]) -> Result<Vec<usize>> {
    Ok(argmax_rows(&logits_for(model, pipeline, seqs)?))
}

pub fn logits_for(model: &Classifier<f32>, pipeline: &Pipeline, seqs: &[PatchSequence]) -> Result<Array2<f32>> {
    let classes = model.config().num_classes;
    let mut out = Array2::zeros((seqs.len(), classes));
    for (c, chunk) in seqs.chunks(64).enumerate() {
        let refs: Vec<&PatchSequence> = chunk.iter().collect();
        let x = pipeline.matrix(&refs)?;
        let (logits, _) = model.forward(&x, chunk.len())?;
        out.slice_mut(ndarray::s![c * 64..c * 64 + chunk.len(), ..]).assign(&logits);
    }
    Ok(out)
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64
}

fn frozen_snapshot(model: &Classifier<f32>) -> Vec<(String, Vec<u8>)> {
    model.params().into_iter().filter(|p| !p.trainable).map(|p| (p.name.clone(), p.value_bytes())).collect()
}

fn check_frozen(model: &Classifier<f32>, before: &[(String, Vec<u8>)]) -> Result<()> {
    let params = model.params();
    for (name, bytes) in before {
        let p = params.iter().find(|p| &p.name == name).expect("parameter set is fixed");
        if &p.value_bytes() != bytes {
            return Err(Error::FrozenViolation(name.clone()));
        }
    }
    Ok(())
}

/// Trains `method` on top of a copy of `pretrained` and keeps the
/// best-validation epoch (ties go to the earliest epoch).
pub fn finetune(
    pretrained: &VitEncoder<f32>,
    method: &FinetuneMethod,
    train: &[ImageSample],
    val: &[ImageSample],
    cfg: &TrainConfig,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::MissingInput("training and validation splits must be non-empty".into()));
    }
    let start = Instant::now();
    let mut init = stream_rng(cfg.seed, &[0]);
    let mut model = Classifier::from_encoder(pretrained.clone(), method, &mut init)?;
    let pipeline = Pipeline::new(model.config(), cfg.augment);
    let train_labels = labels_of(train)?;
    let val_labels = labels_of(val)?;
    let val_seqs = pipeline.prepare_eval(val)?;
    let train_eval = if cfg.augment { None } else { Some(pipeline.prepare_eval(train)?) };

    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let schedule = CosineSchedule::new(cfg.peak_lr(), cfg.epochs * steps_per_epoch, 0.0);
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay);
    let frozen = frozen_snapshot(&model);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Classifier<f32>)> = None;
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let mut rng = stream_rng(cfg.seed, &[1, epoch as u64]);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        let mut lr = schedule.lr_at(step);
        for chunk in order.chunks(cfg.batch_size) {
            let owned: Vec<PatchSequence>;
            let refs: Vec<&PatchSequence> = match &train_eval {
                Some(seqs) => chunk.iter().map(|&i| &seqs[i]).collect(),
                None => {
                    owned = chunk
                        .iter()
                        .map(|&i| pipeline.prepare(&train[i], true, &mut rng))
                        .collect::<Result<_>>()?;
                    owned.iter().collect()
                }
            };
            let labels: Vec<usize> = chunk.iter().map(|&i| train_labels[i]).collect();
            let x = pipeline.matrix(&refs)?;
            let (logits, cache) = model.forward(&x, chunk.len())?;
            let (loss, d_logits) = cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            loss_sum += loss * chunk.len() as f64;
            correct += argmax_rows(&logits).iter().zip(&labels).filter(|(a, b)| a == b).count();
            model.zero_grad();
            model.backward(&cache, &d_logits);
            lr = schedule.lr_at(step);
            opt.step(&mut model.params_mut(), lr);
            step += 1;
        }
        let val_acc = accuracy(&predict(&model, &pipeline, &val_seqs)?, &val_labels);
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            val_acc,
            lr,
        });
        if best.as_ref().is_none_or(|(_, acc, _)| val_acc > *acc) {
            best = Some((epoch, val_acc, model.clone()));
        }
    }
    check_frozen(&model, &frozen)?;
    let (best_epoch, best_val_acc, model) = best.expect("at least one epoch");
    Ok(FinetuneOutcome { model, best_epoch, best_val_acc, log, wall_clock_s: start.elapsed().as_secs_f64() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub base_lr: f64,
    pub weight_decay: f64,
    /// `None` when the run diverged.
    pub val_acc: Option<f64>,
    pub wall_clock_s: f64,
}

pub const GRID_HEADER: &str = "base_lr,weight_decay,val_acc,wall_clock_s";

pub fn grid_csv(points: &[GridPoint]) -> String {
    let mut out = format!("{GRID_HEADER}\n");
    for p in points {
        let acc = p.val_acc.map_or("NaN".to_string(), |a| a.to_string());
        out += &format!("{},{},{},{}\n", p.base_lr, p.weight_decay, acc, p.wall_clock_s);
    }
    out
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub points: Vec<GridPoint>,
    pub best: usize,
    pub outcome: FinetuneOutcome,
}

impl GridResult {
    pub fn best_point(&self) -> &GridPoint {
        &self.points[self.best]
    }
}

/// One run per (base_lr, weight_decay) pair; the highest validation accuracy
/// wins, ties going to the lower learning rate and then the lower decay.
/// Diverging runs are recorded and skipped.
pub fn grid_search(
    pretrained: &VitEncoder<f32>,
    method: &FinetuneMethod,
    base_lrs: &[f64],
    weight_decays: &[f64],
    train: &[ImageSample],
    val: &[ImageSample],
    base: &TrainConfig,
) -> Result<GridResult> {
    if base_lrs.is_empty() || weight_decays.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut lrs = base_lrs.to_vec();
    let mut wds = weight_decays.to_vec();
    lrs.sort_by(f64::total_cmp);
    wds.sort_by(f64::total_cmp);
    let mut points = Vec::new();
    let mut best: Option<(usize, FinetuneOutcome)> = None;
    let mut first_err = None;
    for &base_lr in &lrs {
        for &weight_decay in &wds {
            let cfg = TrainConfig { base_lr, weight_decay, ..base.clone() };
            let start = Instant::now();
            let point = match finetune(pretrained, method, train, val, &cfg) {
                Ok(out) => {
                    let acc = out.best_val_acc;
                    if best.as_ref().is_none_or(|(_, b)| acc > b.best_val_acc) {
                        best = Some((points.len(), out));
                    }
                    Some(acc)
                }
                Err(e @ Error::NonFiniteLoss { .. }) => {
                    first_err.get_or_insert(e);
                    None
                }
                Err(e) => return Err(e),
            };
            points.push(GridPoint { base_lr, weight_decay, val_acc: point, wall_clock_s: start.elapsed().as_secs_f64() });
        }
    }
    match best {
        Some((best, outcome)) => Ok(GridResult { points, best, outcome }),
        None => Err(first_err.expect("every point failed")),
    }
}
