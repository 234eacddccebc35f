mod common;

use common::*;
use prompt_das::mae::{random_mask, DecoderConfig, MaeModel};
use prompt_das::nn::{init_rng, Module};
use prompt_das::vpt::{Classifier, FinetuneMethod, InsertStrategy, PromptConfig};

const EPS: f64 = 1e-3;
const TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-6;
const SCALE: f64 = 0.3;

/// Per-tensor relative error within tolerance, and no single entry grossly off.
fn passes(r: &GradReport) -> bool {
    r.worst_tensor.1 <= TOL && r.worst.4 <= 1e-2
}

fn classifier_report(method: FinetuneMethod, all_trainable: bool, head_hidden: usize) -> GradReport {
    let mut cfg = toy_config(6);
    cfg.head_hidden = head_hidden;
    let mut model = Classifier::<f64>::new(cfg.clone(), &method, &mut init_rng(5)).unwrap();
    scramble(&mut model, SCALE, 6);
    if all_trainable {
        model.set_trainable(true);
    }
    let batch = 2;
    let patches = random_matrix(batch * cfg.num_patches(), cfg.patch_dim(), 9);
    let labels = [1, 4];
    classifier_backprop(&mut model, &patches, &labels);
    check_gradients(&model, EPS, FLOOR, |m| classifier_loss(m, &patches, &labels))
}

#[test]
fn encoder_and_head_gradients_match_differences() {
    let r = classifier_report(FinetuneMethod::FullFineTune, true, 0);
    assert!(r.checked > 1500);
    assert!(passes(&r), "{r:?}");
}

#[test]
fn prompted_gradients_match_differences_with_everything_trainable() {
    for carry in [false, true] {
        let pc = PromptConfig { carry_prompt_outputs: carry, ..PromptConfig::deep(3, 2) };
        let r = classifier_report(FinetuneMethod::Vpt(pc), true, 0);
        assert!(passes(&r), "carry {carry}: {r:?}");
    }
    let top = PromptConfig { strategy: InsertStrategy::TopBottom, ..PromptConfig::deep(2, 1) };
    let r = classifier_report(FinetuneMethod::Vpt(top), false, 0);
    assert!(passes(&r), "{r:?}");
    let r = classifier_report(FinetuneMethod::Vpt(PromptConfig::shallow(4)), false, 0);
    assert!(passes(&r), "{r:?}");
}

#[test]
fn hidden_head_gradients_match_differences() {
    let r = classifier_report(FinetuneMethod::LinearProbe, false, 5);
    assert!(passes(&r), "{r:?}");
}

#[test]
fn mae_gradients_match_differences() {
    let cfg = toy_config(6);
    let dec = DecoderConfig { dim: 6, depth: 1, heads: 2, mlp_ratio: 2.0 };
    let mut model = MaeModel::<f64>::new(cfg.clone(), dec, &mut init_rng(2)).unwrap();
    scramble(&mut model, SCALE, 6);
    let mut rng = init_rng(3);
    let masks: Vec<_> = (0..2).map(|_| random_mask(cfg.num_patches(), 0.5, &mut rng).unwrap()).collect();
    let patches = random_matrix(2 * cfg.num_patches(), cfg.patch_dim(), 4);
    mae_backprop(&mut model, &patches, &masks);
    let r = check_gradients(&model, EPS, FLOOR, |m| mae_loss(m, &patches, &masks));
    assert!(passes(&r), "{r:?}");
}
