//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Runs as a plain binary (`harness = false`). `cargo test --test acceptance`
//! runs everything; pass criterion numbers (`-- 1 4 12`) to run a subset.

mod common;

use std::time::Instant;

use common::*;
use ndarray::Array2;
use prompt_das::batch::{labels_of, Pipeline};
use prompt_das::checkpoint::Checkpoint;
use prompt_das::experiment::{run_eval, run_finetune, RunConfig};
use prompt_das::finetune::{accuracy, cross_entropy, finetune, predict, TrainConfig};
use prompt_das::mae::{masked_count, masked_mse, pretrain, random_mask, train_step, DecoderConfig, MaeModel, PretrainConfig};
use prompt_das::metrics::format_percent;
use prompt_das::nn::{count_parameters, init_rng, Module, ModelConfig, VitEncoder};
use prompt_das::optim::{scaled_lr, AdamW};
use prompt_das::signal::gasf::{gasf_matrix, rescale_unit};
use prompt_das::signal::wavelet::{wavelet_denoise, DenoiseConfig};
use prompt_das::synth::{generate_dataset, generate_split, ScenarioSpec};
use prompt_das::vpt::{count_trainable, Classifier, FinetuneMethod, PromptConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn parameter_accounting() -> Outcome {
    let base = ModelConfig::vit_base(6);
    let total = count_parameters(&base, true).map_err(|e| e.to_string())?;
    let without_head = count_parameters(&base, false).map_err(|e| e.to_string())?;
    let shallow = count_trainable(&FinetuneMethod::Vpt(PromptConfig::shallow(30)), &base).unwrap();
    let deep = count_trainable(&FinetuneMethod::Vpt(PromptConfig::deep(30, 12)), &base).unwrap();
    let pct = format_percent(deep.prompt as f64 / total as f64);
    ensure(
        total == 85_803_270 && without_head == 85_798_656 && shallow.prompt == 23_040 && deep.prompt == 276_480 && pct == "0.322%",
        format!("total {total}, shallow {}, deep {}, deep share {pct}", shallow.prompt, deep.prompt),
    )
}

fn gradient_correctness() -> Outcome {
    let cfg = toy_config(6);
    let mut model = Classifier::<f64>::new(cfg.clone(), &FinetuneMethod::Vpt(PromptConfig::deep(2, 2)), &mut init_rng(5)).unwrap();
    scramble(&mut model, 0.3, 6);
    model.set_trainable(true);
    let patches = random_matrix(2 * cfg.num_patches(), cfg.patch_dim(), 9);
    let labels = [1, 4];
    classifier_backprop(&mut model, &patches, &labels);
    let r = check_gradients(&model, 1e-3, 1e-6, |m| classifier_loss(m, &patches, &labels));
    ensure(
        r.worst_tensor.1 <= 1e-4,
        format!("d={} N={}, {} entries, worst tensor {} at {:.2e}", cfg.dim, cfg.depth, r.checked, r.worst_tensor.0, r.worst_tensor.1),
    )
}

fn masked_loss_locality() -> Outcome {
    let cfg = toy_config(6);
    let model = MaeModel::<f64>::new(cfg.clone(), DecoderConfig { dim: 6, depth: 1, heads: 2, mlp_ratio: 2.0 }, &mut init_rng(0)).unwrap();
    let m = cfg.num_patches();
    let mut rng = init_rng(1);
    let masks: Vec<_> = (0..4).map(|_| random_mask(m, 0.5, &mut rng).unwrap()).collect();
    let patches = random_matrix(4 * m, cfg.patch_dim(), 2);
    let (out, _) = model.forward(&patches, &masks).unwrap();
    let mut perturbed = out.reconstruction.clone();
    let mut visible_grad_zero = true;
    for (b, mk) in masks.iter().enumerate() {
        for &j in &mk.visible {
            perturbed.row_mut(b * m + j).mapv_inplace(|v| v + 17.0);
            visible_grad_zero &= out.d_reconstruction.row(b * m + j).iter().all(|&g| g == 0.0);
        }
    }
    let (after, _) = masked_mse(&perturbed, &patches, &masks).unwrap();
    ensure(
        after.to_bits() == out.loss.to_bits() && visible_grad_zero,
        format!("loss delta {:e}, visible gradients all zero: {visible_grad_zero}", after - out.loss),
    )
}

fn mask_arithmetic() -> Outcome {
    let mk = random_mask(196, 0.75, &mut init_rng(0)).unwrap();
    let counts = (mk.masked.len(), mk.visible.len(), masked_count(196, 0.75));
    let mut hits = [0usize; 196];
    let mut rng = init_rng(1);
    let draws = 10_000;
    for _ in 0..draws {
        for j in random_mask(196, 0.5, &mut rng).unwrap().masked {
            hits[j] += 1;
        }
    }
    let (lo, hi) = hits.iter().fold((1.0f64, 0.0f64), |(lo, hi), &h| {
        let f = h as f64 / draws as f64;
        (lo.min(f), hi.max(f))
    });
    ensure(
        counts == (147, 49, 147) && lo >= 0.48 && hi <= 0.52,
        format!("{}/{} masked/visible; per-index frequency in [{lo:.4}, {hi:.4}]", counts.0, counts.1),
    )
}

fn frozen_backbone() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pretrained.mpdc");
    let encoder = VitEncoder::<f32>::new(ModelConfig::desk(6), &mut init_rng(11)).unwrap();
    Checkpoint::from_params(String::new(), encoder.params()).save(&path).unwrap();
    let saved = Checkpoint::load(&path).map_err(|e| e.to_string())?;
    let mut restored = VitEncoder::<f32>::new(encoder.config.clone(), &mut init_rng(0)).unwrap();
    saved.restore(&mut restored).unwrap();
    let spec = ScenarioSpec::default_six_class().with_counts(4, 1, 1);
    let train = generate_split(&spec, 3, "train").unwrap();
    let val = generate_split(&spec, 3, "val").unwrap();
    let cfg = TrainConfig { epochs: 2, batch_size: 4, base_lr: 50.0, ..Default::default() };
    let steps = cfg.epochs * train.len().div_ceil(cfg.batch_size);
    let mut details = Vec::new();
    for method in [FinetuneMethod::Vpt(PromptConfig::deep(5, 4)), FinetuneMethod::LinearProbe] {
        let out = finetune(&restored, &method, &train, &val, &cfg).map_err(|e| e.to_string())?;
        let after = Checkpoint::from_params(String::new(), out.model.encoder.params());
        let identical = after.tensors.len() == saved.tensors.len()
            && after.tensors.iter().zip(&saved.tensors).all(|((na, a), (nb, b))| {
                na == nb && a.iter().map(|v| v.to_bits()).eq(b.iter().map(|v| v.to_bits()))
            });
        if !identical {
            return Err(format!("{method}: backbone changed"));
        }
        details.push(format!("{method}: {} tensors unchanged", after.tensors.len()));
    }
    ensure(steps >= 10, format!("{steps} steps each; {}", details.join(", ")))
}

fn degenerate_prompts() -> Outcome {
    let cfg = ModelConfig::desk(6);
    let encoder = VitEncoder::<f32>::new(cfg.clone(), &mut init_rng(1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let patches = Array2::<f32>::from_shape_fn((4 * cfg.num_patches(), cfg.patch_dim()), |_| rng.random_range(-2.0..2.0));
    let bits = |m: &Classifier<f32>| -> Vec<u32> { m.forward(&patches, 4).unwrap().0.iter().map(|v| v.to_bits()).collect() };
    let lp = Classifier::from_encoder(encoder.clone(), &FinetuneMethod::LinearProbe, &mut init_rng(7)).unwrap();
    let zero = Classifier::from_encoder(encoder.clone(), &FinetuneMethod::Vpt(PromptConfig::deep(0, cfg.depth)), &mut init_rng(7)).unwrap();
    let p0 = bits(&zero) == bits(&lp);
    let shallow = Classifier::from_encoder(encoder.clone(), &FinetuneMethod::Vpt(PromptConfig::shallow(8)), &mut init_rng(8)).unwrap();
    let mut deep = Classifier::from_encoder(encoder, &FinetuneMethod::Vpt(PromptConfig::deep(8, 1)), &mut init_rng(9)).unwrap();
    deep.head = shallow.head.clone();
    deep.prompts.as_mut().unwrap().prompts[0].value = shallow.prompts.as_ref().unwrap().prompts[0].value.clone();
    let sd = bits(&deep) == bits(&shallow);
    ensure(p0 && sd, format!("p=0 vs LP identical: {p0}; shallow p=8 vs deep depth-1 identical: {sd}"))
}

fn wavelet_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = DenoiseConfig { threshold: 0.0, ..Default::default() };
    let mut worst = 0.0f64;
    for i in 0..100 {
        let n = 64 + 37 * i;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y = wavelet_denoise(&x, &cfg).map_err(|e| e.to_string())?;
        let num: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let den: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(num / den);
    }
    ensure(worst <= 1e-10, format!("worst relative L2 error {worst:.2e} over 100 signals"))
}

fn gasf_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<f64> = (0..50).map(|_| rng.random_range(-3.0..8.0)).collect();
    let g = gasf_matrix(&x).unwrap();
    let xt = rescale_unit(&x);
    let symmetric = (0..g.rows).all(|i| (0..g.cols).all(|j| g.get(i, j).to_bits() == g.get(j, i).to_bits()));
    let diag = (0..g.rows).map(|i| (g.get(i, i) - (2.0 * xt[i] * xt[i] - 1.0)).abs()).fold(0.0, f64::max);
    let two = gasf_matrix(&[-1.0, 1.0]).unwrap();
    let expect = [1.0, -1.0, -1.0, 1.0];
    let two_ok = two.data.iter().zip(expect).all(|(a, b)| (a - b).abs() <= 1e-12);
    ensure(symmetric && diag <= 1e-12 && two_ok, format!("symmetric {symmetric}, diagonal error {diag:.1e}, two-point {:?}", two.data))
}

fn overfit_capacity() -> Outcome {
    let spec = ScenarioSpec::default_six_class().with_counts(6, 1, 1);
    let train: Vec<_> = generate_split(&spec, 5, "train").unwrap().into_iter().take(32).collect();
    let cfg = ModelConfig::desk(6);
    let encoder = VitEncoder::<f32>::new(cfg.clone(), &mut init_rng(0)).unwrap();
    let tc = TrainConfig { epochs: 200, augment: false, ..Default::default() };
    let out = finetune(&encoder, &FinetuneMethod::FullFineTune, &train, &train, &tc).map_err(|e| e.to_string())?;
    let first_full = out.log.iter().find(|e| e.train_acc >= 1.0).map(|e| e.epoch);

    let mut mae = MaeModel::<f32>::new(cfg.clone(), DecoderConfig::desk(), &mut init_rng(1)).unwrap();
    let pipeline = Pipeline::new(&cfg, false);
    let seqs = pipeline.prepare_eval(&train[..4]).unwrap();
    let x = pipeline.matrix(&seqs.iter().collect::<Vec<_>>()).unwrap();
    let mut rng = init_rng(2);
    let masks: Vec<_> = (0..4).map(|_| random_mask(cfg.num_patches(), 0.75, &mut rng).unwrap()).collect();
    let mut opt = AdamW::new(0.0);
    let initial = mae.forward(&x, &masks).unwrap().0.loss;
    let mut best = initial;
    let mut reached = None;
    for step in 1..=200 {
        train_step(&mut mae, &mut opt, &x, &masks, 1e-3).map_err(|e| e.to_string())?;
        best = best.min(mae.forward(&x, &masks).unwrap().0.loss);
        if reached.is_none() && best <= 0.1 * initial {
            reached = Some(step);
        }
    }
    ensure(
        first_full.is_some() && reached.is_some(),
        format!(
            "FFT 100% train accuracy at epoch {first_full:?}; MAE loss {initial:.4} -> {best:.4} ({:.1}%), <=10% at step {reached:?}",
            100.0 * best / initial
        ),
    )
}

/// Hyper-parameters of the end-to-end ordering run.
struct Protocol {
    pool_per_class: usize,
    mae_epochs: usize,
    finetune_epochs: usize,
    lp_lr: f64,
    fft_lr: f64,
    vpt_lr: f64,
    prompt_counts: &'static [usize],
}

const PROTOCOL: Protocol = Protocol {
    pool_per_class: 200,
    mae_epochs: 400,
    finetune_epochs: 100,
    lp_lr: 8.0,
    fft_lr: 0.5,
    vpt_lr: 8.0,
    prompt_counts: &[5, 10, 20],
};

fn end_to_end_ordering() -> Outcome {
    let p = &PROTOCOL;
    let spec = ScenarioSpec::default_six_class().with_counts(40, 40, 100);
    let train = generate_split(&spec, 1, "train").unwrap();
    let val = generate_split(&spec, 1, "val").unwrap();
    let test = generate_split(&spec, 1, "test").unwrap();
    let pool = generate_split(&ScenarioSpec::default_six_class().with_counts(p.pool_per_class, 0, 0), 99, "train").unwrap();
    let model = ModelConfig::desk(6);
    let pc = PretrainConfig { epochs: p.mae_epochs, augment: false, ..Default::default() };
    let encoder = pretrain(&pool, &model, &DecoderConfig::desk(), &pc).map_err(|e| e.to_string())?.model.encoder;

    let pipeline = Pipeline::new(&model, false);
    let test_seqs = pipeline.prepare_eval(&test).unwrap();
    let test_labels = labels_of(&test).unwrap();
    let run = |method: &FinetuneMethod, lr: f64| -> Result<(f64, f64), String> {
        let tc = TrainConfig { epochs: p.finetune_epochs, base_lr: lr, augment: false, ..Default::default() };
        let out = finetune(&encoder, method, &train, &val, &tc).map_err(|e| e.to_string())?;
        Ok((out.best_val_acc, accuracy(&predict(&out.model, &pipeline, &test_seqs).unwrap(), &test_labels)))
    };
    let (_, lp) = run(&FinetuneMethod::LinearProbe, p.lp_lr)?;
    let (_, fft) = run(&FinetuneMethod::FullFineTune, p.fft_lr)?;
    // Prompt count picked on validation accuracy; ties keep the smaller count.
    let mut best: Option<(usize, f64, f64)> = None;
    for &count in p.prompt_counts {
        let (val_acc, test_acc) = run(&FinetuneMethod::Vpt(PromptConfig::deep(count, model.depth)), p.vpt_lr)?;
        if best.is_none_or(|(_, v, _)| val_acc > v) {
            best = Some((count, val_acc, test_acc));
        }
    }
    let (count, _, vpt) = best.expect("non-empty sweep");
    ensure(
        vpt >= lp + 0.10 && vpt >= fft - 0.05,
        format!("VPT-deep p={count} {:.1}%, LP {:.1}%, FFT {:.1}% (train 240, test 600)", 100.0 * vpt, 100.0 * lp, 100.0 * fft),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    generate_dataset(&ScenarioSpec::default_six_class().with_counts(6, 3, 3), 2, &root.join("data")).map_err(|e| e.to_string())?;
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let cfg = RunConfig::parse(&format!(
            "data.dir = {}\noutput = {}\nseed = 4\ntrain.epochs = 3\nmethod = vpt\nvpt.p = 4\n",
            root.join("data").display(),
            root.join(run).display()
        ))
        .map_err(|e| e.to_string())?;
        run_finetune(&cfg).map_err(|e| e.to_string())?;
        run_eval(&cfg).map_err(|e| e.to_string())?;
        csvs.push(std::fs::read(root.join(run).join("metrics.csv")).unwrap());
    }
    ensure(csvs[0] == csvs[1], format!("metrics.csv {} bytes, identical: {}", csvs[0].len(), csvs[0] == csvs[1]))
}

fn loss_and_lr_oracles() -> Outcome {
    let (ce, _) = cross_entropy(&Array2::<f64>::zeros((3, 6)), &[0, 3, 5]).unwrap();
    let lr = scaled_lr(0.5, 16);
    ensure((ce - 6f64.ln()).abs() <= 1e-9 && lr == 0.03125, format!("CE {ce:.12} vs ln 6 {:.12}; lr {lr}", 6f64.ln()))
}

type Criterion = (usize, &'static str, fn() -> Outcome);

const CRITERIA: &[Criterion] = &[
    (1, "parameter accounting", parameter_accounting),
    (2, "gradient correctness", gradient_correctness),
    (3, "masked-loss locality", masked_loss_locality),
    (4, "mask arithmetic", mask_arithmetic),
    (5, "frozen backbone", frozen_backbone),
    (6, "degenerate prompts", degenerate_prompts),
    (7, "wavelet round trip", wavelet_round_trip),
    (8, "GASF identities", gasf_identities),
    (9, "overfit capacity", overfit_capacity),
    (10, "end-to-end ordering", end_to_end_ordering),
    (11, "determinism", determinism),
    (12, "loss and lr oracles", loss_and_lr_oracles),
];

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for &(id, name, check) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

