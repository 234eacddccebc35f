//! Shared fixtures: toy models and a central finite-difference gradient checker.
#![allow(dead_code)]

use ndarray::Array2;
use prompt_das::finetune::cross_entropy;
use prompt_das::mae::{MaeModel, MaskPartition};
use prompt_das::nn::{Module, ModelConfig};
use prompt_das::vpt::Classifier;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 8px three-channel images in 4px patches, width 8, two blocks.
pub fn toy_config(num_classes: usize) -> ModelConfig {
    ModelConfig {
        image_size: 8,
        patch: 4,
        channels: 3,
        dim: 8,
        depth: 2,
        heads: 2,
        mlp_ratio: 2.0,
        num_classes,
        head_hidden: 0,
    }
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Relative error of one analytic/numeric pair; `floor` keeps entries whose
/// true gradient is essentially zero from dividing by round-off.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug)]
pub struct GradReport {
    pub checked: usize,
    /// (parameter name, element, analytic, numeric, relative error) of the worst entry.
    pub worst: (String, usize, f64, f64, f64),
    /// Largest per-tensor `|a - n|_2 / max(|a|_2, |n|_2)`.
    pub worst_tensor: (String, f64),
}

/// Compares the gradients already accumulated in `model` against central
/// differences of `loss` for every trainable element.
pub fn check_gradients<M: Module<f64> + Clone>(model: &M, eps: f64, floor: f64, loss: impl Fn(&M) -> f64) -> GradReport {
    let mut probe = model.clone();
    let mut report = GradReport { checked: 0, worst: (String::new(), 0, 0.0, 0.0, 0.0), worst_tensor: (String::new(), 0.0) };
    let names: Vec<(String, bool, usize)> = model.params().iter().map(|p| (p.name.clone(), p.trainable, p.numel())).collect();
    for (k, (name, trainable, numel)) in names.into_iter().enumerate() {
        if !trainable {
            continue;
        }
        let analytic: Vec<f64> = model.params()[k].grad.iter().copied().collect();
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for (j, &a) in analytic.iter().enumerate().take(numel) {
            let orig = probe.params()[k].value.as_slice().unwrap()[j];
            probe.params_mut()[k].value.as_slice_mut().unwrap()[j] = orig + eps;
            let up = loss(&probe);
            probe.params_mut()[k].value.as_slice_mut().unwrap()[j] = orig - eps;
            let down = loss(&probe);
            probe.params_mut()[k].value.as_slice_mut().unwrap()[j] = orig;
            let n = (up - down) / (2.0 * eps);
            let e = relative_error(a, n, floor);
            diff2 += (a - n) * (a - n);
            a2 += a * a;
            n2 += n * n;
            report.checked += 1;
            if e >= report.worst.4 {
                report.worst = (name.clone(), j, a, n, e);
            }
        }
        let t = diff2.sqrt() / a2.sqrt().max(n2.sqrt()).max(floor);
        if t >= report.worst_tensor.1 {
            report.worst_tensor = (name.clone(), t);
        }
    }
    report
}

pub fn classifier_loss(model: &Classifier<f64>, patches: &Array2<f64>, labels: &[usize]) -> f64 {
    let (logits, _) = model.forward(patches, labels.len()).unwrap();
    cross_entropy(&logits, labels).unwrap().0
}

/// Runs forward and backward once so that `model` holds analytic gradients.
pub fn classifier_backprop(model: &mut Classifier<f64>, patches: &Array2<f64>, labels: &[usize]) -> f64 {
    model.zero_grad();
    let (logits, cache) = model.forward(patches, labels.len()).unwrap();
    let (loss, d) = cross_entropy(&logits, labels).unwrap();
    model.backward(&cache, &d);
    loss
}

pub fn mae_loss(model: &MaeModel<f64>, patches: &Array2<f64>, masks: &[MaskPartition]) -> f64 {
    model.forward(patches, masks).unwrap().0.loss
}

pub fn mae_backprop(model: &mut MaeModel<f64>, patches: &Array2<f64>, masks: &[MaskPartition]) -> f64 {
    model.zero_grad();
    let (out, cache) = model.forward(patches, masks).unwrap();
    model.backward(&cache, &out.d_reconstruction);
    out.loss
}

/// Moves every parameter to a generic point: biases, class token and norm
/// affines become non-trivial and activations reach unit scale, so the check
/// also covers terms that vanish at initialisation.
pub fn scramble<M: Module<f64>>(model: &mut M, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.params_mut() {
        p.value.mapv_inplace(|v| v + rng.random_range(-scale..scale));
    }
}
