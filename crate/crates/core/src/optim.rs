//! Optimisers and learning-rate schedules. Only trainable parameters are
//! touched; frozen values are never written.

use ndarray::{Array2, Zip};

use crate::nn::{Param, Real};

/// Linear scaling rule: `base_lr × batch / 256`.
pub fn scaled_lr(base_lr: f64, batch_size: usize) -> f64 {
    base_lr * batch_size as f64 / 256.0
}

/// Half-cosine decay from `peak` to zero over `total_steps`, after an
/// optional linear warmup.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineSchedule {
    pub peak: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
}

impl CosineSchedule {
    pub fn new(peak: f64, total_steps: usize, warmup_fraction: f64) -> Self {
        let warmup_steps = ((total_steps as f64) * warmup_fraction).round() as usize;
        Self { peak, total_steps, warmup_steps: warmup_steps.min(total_steps) }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        0.5 * self.peak * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

fn ensure_state<T: Real>(state: &mut Vec<Array2<T>>, params: &[&mut Param<T>]) {
    if state.len() != params.len() {
        *state = params.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect();
    }
}

/// AdamW with decoupled weight decay applied to `decay` parameters.
#[derive(Debug, Clone)]
pub struct AdamW<T: Real> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: i32,
    m: Vec<Array2<T>>,
    v: Vec<Array2<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(weight_decay: f64) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step(&mut self, params: &mut [&mut Param<T>], lr: f64) {
        ensure_state(&mut self.m, params);
        ensure_state(&mut self.v, params);
        self.step += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let bc1 = T::of(1.0 - self.beta1.powi(self.step));
        let bc2 = T::of(1.0 - self.beta2.powi(self.step));
        let (lr_t, eps) = (T::of(lr), T::of(self.eps));
        let shrink = T::of(1.0 - lr * self.weight_decay);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            if p.decay && self.weight_decay != 0.0 {
                p.value.mapv_inplace(|x| x * shrink);
            }
            Zip::from(&mut p.value).and(&p.grad).and(m).and(v).for_each(|x, &g, m, v| {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *x -= lr_t * mh / (vh.sqrt() + eps);
            });
        }
    }
}

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Sgd<T: Real> {
    pub momentum: f64,
    pub weight_decay: f64,
    buf: Vec<Array2<T>>,
    started: bool,
}

impl<T: Real> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, buf: Vec::new(), started: false }
    }

    pub fn step(&mut self, params: &mut [&mut Param<T>], lr: f64) {
        ensure_state(&mut self.buf, params);
        let (mu, wd, lr_t) = (T::of(self.momentum), T::of(self.weight_decay), T::of(lr));
        let first = !self.started;
        self.started = true;
        for (p, buf) in params.iter_mut().zip(&mut self.buf) {
            if !p.trainable {
                continue;
            }
            Zip::from(&mut p.value).and(&p.grad).and(buf).for_each(|x, &g, b| {
                let g = g + wd * *x;
                *b = if first { g } else { mu * *b + g };
                *x -= lr_t * *b;
            });
        }
    }
}
