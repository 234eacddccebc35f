mod common;

use common::*;
use prompt_das::checkpoint::Checkpoint;
use prompt_das::finetune::{finetune, TrainConfig};
use prompt_das::nn::{init_rng, Module, ModelConfig, VitEncoder};
use prompt_das::synth::{generate_split, ScenarioSpec};
use prompt_das::vpt::{count_trainable, Classifier, FinetuneMethod, InsertStrategy, PromptConfig};

fn logits_bits(model: &Classifier<f64>, patches: &ndarray::Array2<f64>, batch: usize) -> Vec<u64> {
    model.forward(patches, batch).unwrap().0.iter().map(|v| v.to_bits()).collect()
}

#[test]
fn zero_prompts_reproduce_the_linear_probe_bit_for_bit() {
    let cfg = toy_config(6);
    let encoder = VitEncoder::<f64>::new(cfg.clone(), &mut init_rng(1)).unwrap();
    let patches = random_matrix(3 * cfg.num_patches(), cfg.patch_dim(), 2);
    let lp = Classifier::from_encoder(encoder.clone(), &FinetuneMethod::LinearProbe, &mut init_rng(7)).unwrap();
    for pc in [PromptConfig::deep(0, 2), PromptConfig::shallow(0), PromptConfig { carry_prompt_outputs: true, ..PromptConfig::deep(0, 1) }] {
        let vpt = Classifier::from_encoder(encoder.clone(), &FinetuneMethod::Vpt(pc), &mut init_rng(7)).unwrap();
        assert_eq!(vpt.head, lp.head);
        assert_eq!(logits_bits(&vpt, &patches, 3), logits_bits(&lp, &patches, 3));
    }
}

#[test]
fn shallow_prompts_equal_deep_prompts_at_the_first_layer_only() {
    let cfg = toy_config(6);
    let encoder = VitEncoder::<f64>::new(cfg.clone(), &mut init_rng(1)).unwrap();
    let patches = random_matrix(2 * cfg.num_patches(), cfg.patch_dim(), 3);
    for k in [1, 4] {
        let shallow = Classifier::from_encoder(encoder.clone(), &FinetuneMethod::Vpt(PromptConfig::shallow(k)), &mut init_rng(8)).unwrap();
        let mut deep = Classifier::from_encoder(encoder.clone(), &FinetuneMethod::Vpt(PromptConfig::deep(k, 1)), &mut init_rng(9)).unwrap();
        deep.head = shallow.head.clone();
        deep.prompts.as_mut().unwrap().prompts[0].value = shallow.prompts.as_ref().unwrap().prompts[0].value.clone();
        assert_eq!(deep.prompts.as_ref().unwrap().layers, vec![0]);
        assert_eq!(logits_bits(&deep, &patches, 2), logits_bits(&shallow, &patches, 2));
    }
}

#[test]
fn sequence_lengths_follow_the_insertion_set() {
    let cfg = toy_config(6);
    let m = cfg.num_patches();
    let patches = random_matrix(m, cfg.patch_dim(), 4);
    let cases = [
        (PromptConfig::deep(3, 2), vec![1 + 3 + m, 1 + 3 + m], vec![1 + m, 1 + m]),
        (PromptConfig { strategy: InsertStrategy::TopBottom, ..PromptConfig::deep(3, 1) }, vec![1 + m, 1 + 3 + m], vec![1 + m, 1 + m]),
        (PromptConfig::shallow(5), vec![1 + 5 + m, 1 + m], vec![1 + m, 1 + m]),
        (PromptConfig { carry_prompt_outputs: true, ..PromptConfig::shallow(5) }, vec![1 + 5 + m, 1 + 5 + m], vec![1 + 5 + m, 1 + 5 + m]),
    ];
    for (pc, inputs, outputs) in cases {
        let model = Classifier::<f64>::new(cfg.clone(), &FinetuneMethod::Vpt(pc.clone()), &mut init_rng(0)).unwrap();
        let (_, cache) = model.forward(&patches, 1).unwrap();
        assert_eq!(cache.trace.block_input_rows, inputs, "{pc:?}");
        assert_eq!(cache.trace.block_output_rows, outputs, "{pc:?}");
        assert_eq!(cache.trace.final_rows, 1 + m);
    }
}

#[test]
fn prompt_tuning_only_produces_prompt_and_head_gradients() {
    let cfg = toy_config(6);
    let patches = random_matrix(2 * cfg.num_patches(), cfg.patch_dim(), 5);
    for method in [FinetuneMethod::Vpt(PromptConfig::deep(2, 2)), FinetuneMethod::LinearProbe] {
        let mut model = Classifier::<f64>::new(cfg.clone(), &method, &mut init_rng(3)).unwrap();
        classifier_backprop(&mut model, &patches, &[0, 5]);
        for p in model.encoder.params() {
            assert!(!p.trainable);
            assert!(p.grad.iter().all(|&g| g == 0.0), "{} received a gradient", p.name);
        }
        for p in model.params().into_iter().filter(|p| p.trainable) {
            assert!(p.grad.iter().any(|&g| g != 0.0), "{} has no gradient", p.name);
        }
    }
}

#[test]
fn backbone_bytes_survive_prompt_and_probe_training() {
    let model = ModelConfig::desk(6);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pretrained.mpdc");
    let encoder = VitEncoder::<f32>::new(model, &mut init_rng(11)).unwrap();
    Checkpoint::from_params(String::new(), encoder.params()).save(&path).unwrap();
    let saved = Checkpoint::load(&path).unwrap();
    let mut restored = VitEncoder::<f32>::new(encoder.config.clone(), &mut init_rng(0)).unwrap();
    saved.restore(&mut restored).unwrap();

    let spec = ScenarioSpec::default_six_class().with_counts(4, 1, 1);
    let train = generate_split(&spec, 3, "train").unwrap();
    let val = generate_split(&spec, 3, "val").unwrap();
    // 24 samples in batches of 4 over 2 epochs: 12 optimizer steps.
    let cfg = TrainConfig { epochs: 2, batch_size: 4, base_lr: 50.0, ..Default::default() };
    for method in [FinetuneMethod::Vpt(PromptConfig::deep(5, 4)), FinetuneMethod::LinearProbe] {
        let out = finetune(&restored, &method, &train, &val, &cfg).unwrap();
        let after = Checkpoint::from_params(String::new(), out.model.encoder.params());
        assert_eq!(after.tensors, saved.tensors, "{method}");
        let initial = Classifier::from_encoder(restored.clone(), &method, &mut init_rng(0)).unwrap();
        assert_ne!(out.model.head, initial.head, "{method}: head never moved");
    }
}

#[test]
fn trainable_counts_match_module_contents() {
    let cfg = toy_config(6);
    for method in [
        FinetuneMethod::FullFineTune,
        FinetuneMethod::LinearProbe,
        FinetuneMethod::Vpt(PromptConfig::deep(3, 2)),
        FinetuneMethod::Vpt(PromptConfig::shallow(7)),
    ] {
        let model = Classifier::<f64>::new(cfg.clone(), &method, &mut init_rng(0)).unwrap();
        let trainable: usize = model.params().iter().filter(|p| p.trainable).map(|p| p.numel()).sum();
        assert_eq!(count_trainable(&method, &cfg).unwrap().trainable(), trainable, "{method}");
    }
}
