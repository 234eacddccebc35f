//! Configuration-driven runs behind the command-line subcommands.
//!
//! Every run is described by a [`RunConfig`] parsed from a flat key-value
//! file. Artifacts land under `output` (default `$PROMPT_DAS_OUTPUT`, else
//! `runs`); all CSVs have a header row and use `,` as the delimiter.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::batch::{labels_of, Pipeline};
use crate::checkpoint::Checkpoint;
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::finetune::{epoch_log_csv, finetune, grid_csv, grid_search, predict, FinetuneOutcome, TrainConfig};
use crate::mae::{pretrain, pretrain_log_csv, DecoderConfig, MaeModel, PretrainConfig};
use crate::metrics::{format_percent, parse_metric_rows, MetricsReport};
use crate::nn::{init_rng, stream_rng, Module, ModelConfig, VitEncoder};
use crate::signal::dataset::{self, DATASET_META};
use crate::signal::ImageSample;
use crate::synth::{generate_dataset, ScenarioSpec, SplitCounts, SPLITS};
use crate::vpt::{count_trainable, format_layers, select_inserted_layers, Classifier, FinetuneMethod, InsertStrategy, PromptConfig, PromptVariant};

pub const OUTPUT_ENV: &str = "PROMPT_DAS_OUTPUT";
pub const PRETRAINED_FILE: &str = "pretrained.mpdc";
pub const MODEL_FILE: &str = "model.mpdc";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    PromptCount,
    Depth,
    DataSize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub kind: Option<SweepKind>,
    pub p_values: Vec<usize>,
    pub depths: Vec<usize>,
    pub strategies: Vec<InsertStrategy>,
    pub sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub output: PathBuf,
    pub seed: u64,
    /// Dataset root read by training and evaluation, written by `synth`.
    pub data_dir: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
    pub synth_counts: Option<SplitCounts>,
    pub preprocess_input: Option<PathBuf>,
    pub preprocess_size: usize,
    pub model: ModelConfig,
    pub decoder: DecoderConfig,
    pub pretrain: PretrainConfig,
    /// Dataset and split used for pretraining (defaults to `data.dir`, `train`).
    pub pretrain_data: Option<PathBuf>,
    pub pretrain_split: String,
    pub pretrained: Option<PathBuf>,
    pub train: TrainConfig,
    pub method: FinetuneMethod,
    pub grid_lrs: Option<Vec<f64>>,
    pub grid_wds: Option<Vec<f64>>,
    pub checkpoint: Option<PathBuf>,
    pub eval_split: String,
    pub sweep: SweepConfig,
    pub report_dir: Option<PathBuf>,
    /// Sorted `key = value` echo of the parsed file and overrides.
    pub canonical: String,
}

fn parse_method(kind: &str, prompt: PromptConfig) -> Result<FinetuneMethod> {
    match kind {
        "fft" | "full" | "full_finetune" => Ok(FinetuneMethod::FullFineTune),
        "lp" | "linear_probe" => Ok(FinetuneMethod::LinearProbe),
        "vpt" => Ok(FinetuneMethod::Vpt(prompt)),
        other => Err(Error::BadConfig(format!("unknown method `{other}`"))),
    }
}

fn read_model(kv: &mut KeyValues, prefix: &str, classes_default: usize) -> Result<ModelConfig> {
    let k = |f: &str| format!("{prefix}{f}");
    let preset: String = kv.get_or(&k("preset"), "desk".to_string())?;
    let classes = kv.get_or(&k("num_classes"), classes_default)?;
    let mut m = match preset.as_str() {
        "desk" => ModelConfig::desk(classes),
        "vit_base" => ModelConfig::vit_base(classes),
        other => return Err(Error::BadConfig(format!("unknown model preset `{other}`"))),
    };
    m.image_size = kv.get_or(&k("image_size"), m.image_size)?;
    m.patch = kv.get_or(&k("patch"), m.patch)?;
    m.channels = kv.get_or(&k("channels"), m.channels)?;
    m.dim = kv.get_or(&k("dim"), m.dim)?;
    m.depth = kv.get_or(&k("depth"), m.depth)?;
    m.heads = kv.get_or(&k("heads"), m.heads)?;
    m.mlp_ratio = kv.get_or(&k("mlp_ratio"), m.mlp_ratio)?;
    m.head_hidden = kv.get_or(&k("head_hidden"), m.head_hidden)?;
    m.validate()?;
    Ok(m)
}

fn read_prompt(kv: &mut KeyValues, prefix: &str, depth: usize) -> Result<PromptConfig> {
    let k = |f: &str| format!("{prefix}{f}");
    let variant: String = kv.get_or(&k("variant"), "deep".to_string())?;
    let strategy: String = kv.get_or(&k("strategy"), "bottom_top".to_string())?;
    Ok(PromptConfig {
        variant: PromptVariant::parse(&variant).ok_or_else(|| Error::BadConfig(format!("unknown vpt variant `{variant}`")))?,
        p: kv.get_or(&k("p"), 10)?,
        strategy: InsertStrategy::parse(&strategy)
            .ok_or_else(|| Error::BadConfig(format!("unknown vpt strategy `{strategy}`")))?,
        depth: kv.get_or(&k("depth"), depth)?,
        carry_prompt_outputs: kv.get_bool(&k("carry"), false)?,
    })
}

/// Number of classes recorded in `dataset.txt`, if any.
fn dataset_classes(root: &Path) -> Option<usize> {
    let text = fs::read_to_string(root.join(DATASET_META)).ok()?;
    let mut kv = KeyValues::parse(&text).ok()?;
    kv.get::<usize>("classes").ok().flatten()
}

impl RunConfig {
    pub fn from_kv(mut kv: KeyValues) -> Result<Self> {
        let canonical = kv.canonical();
        let output = match kv.raw("output") {
            Some(o) => PathBuf::from(o),
            None => std::env::var_os(OUTPUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs")),
        };
        let seed = kv.get_or("seed", 0u64)?;
        let data_dir = kv.get::<String>("data.dir")?.map(PathBuf::from);
        let scenario = kv.get::<String>("synth.scenario")?.map(PathBuf::from);
        let synth_counts = match kv.get_list::<usize>("synth.counts")? {
            None => None,
            Some(c) => match c[..] {
                [train, val, test] => Some(SplitCounts { train, val, test }),
                _ => return Err(Error::BadConfig("synth.counts must be `train, val, test`".into())),
            },
        };
        let preprocess_input = kv.get::<String>("preprocess.input")?.map(PathBuf::from);
        let preprocess_size = kv.get_or("preprocess.size", 32usize)?;
        let classes_default = data_dir.as_deref().and_then(dataset_classes).unwrap_or(6);
        let model = read_model(&mut kv, "model.", classes_default)?;

        let d = DecoderConfig::desk();
        let decoder = DecoderConfig {
            dim: kv.get_or("mae.decoder_dim", d.dim)?,
            depth: kv.get_or("mae.decoder_depth", d.depth)?,
            heads: kv.get_or("mae.decoder_heads", d.heads)?,
            mlp_ratio: d.mlp_ratio,
        };
        decoder.validate()?;
        let p = PretrainConfig::default();
        let pretrain = PretrainConfig {
            epochs: kv.get_or("mae.epochs", p.epochs)?,
            batch_size: kv.get_or("mae.batch_size", p.batch_size)?,
            lr: kv.get_or("mae.lr", p.lr)?,
            weight_decay: kv.get_or("mae.weight_decay", p.weight_decay)?,
            warmup_fraction: kv.get_or("mae.warmup_fraction", p.warmup_fraction)?,
            mask_ratio: kv.get_or("mae.mask_ratio", p.mask_ratio)?,
            seed,
            augment: kv.get_bool("mae.augment", p.augment)?,
        };
        if !(0.0..=1.0).contains(&pretrain.mask_ratio) {
            return Err(Error::RatioOutOfRange(pretrain.mask_ratio));
        }
        let pretrain_data = kv.get::<String>("mae.data")?.map(PathBuf::from);
        let pretrain_split = kv.get_or("mae.split", "train".to_string())?;
        let pretrained = kv.get::<String>("pretrained")?.map(PathBuf::from);

        let t = TrainConfig::default();
        let train = TrainConfig {
            epochs: kv.get_or("train.epochs", t.epochs)?,
            batch_size: kv.get_or("train.batch_size", t.batch_size)?,
            base_lr: kv.get_or("train.base_lr", t.base_lr)?,
            weight_decay: kv.get_or("train.weight_decay", t.weight_decay)?,
            momentum: kv.get_or("train.momentum", t.momentum)?,
            seed,
            augment: kv.get_bool("train.augment", t.augment)?,
        };
        train.validate()?;
        let prompt = read_prompt(&mut kv, "vpt.", model.depth)?;
        let method_name: String = kv.get_or("method", "vpt".to_string())?;
        let method = parse_method(&method_name, prompt)?;
        if let FinetuneMethod::Vpt(cfg) = &method {
            select_inserted_layers(cfg, model.depth)?;
        }
        let grid_lrs = kv.get_list::<f64>("grid.base_lr")?;
        let grid_wds = kv.get_list::<f64>("grid.weight_decay")?;
        if grid_lrs.as_ref().is_some_and(Vec::is_empty) || grid_wds.as_ref().is_some_and(Vec::is_empty) {
            return Err(Error::EmptyGrid);
        }
        let checkpoint = kv.get::<String>("checkpoint")?.map(PathBuf::from);
        let eval_split = kv.get_or("eval.split", "test".to_string())?;

        let kind = match kv.raw("sweep.kind").as_deref() {
            None => None,
            Some("prompt_count") => Some(SweepKind::PromptCount),
            Some("depth") => Some(SweepKind::Depth),
            Some("datasize") => Some(SweepKind::DataSize),
            Some(other) => return Err(Error::BadConfig(format!("unknown sweep kind `{other}`"))),
        };
        let strategies = match kv.get_list::<String>("sweep.strategies")? {
            None => vec![InsertStrategy::BottomTop, InsertStrategy::TopBottom],
            Some(v) => v
                .iter()
                .map(|s| InsertStrategy::parse(s).ok_or_else(|| Error::BadConfig(format!("unknown strategy `{s}`"))))
                .collect::<Result<_>>()?,
        };
        let sweep = SweepConfig {
            kind,
            p_values: kv.get_list("sweep.p")?.unwrap_or_else(|| vec![1, 5, 10, 15, 20, 25, 30]),
            depths: kv.get_list("sweep.depths")?.unwrap_or_else(|| (1..=model.depth).collect()),
            strategies,
            sizes: kv.get_list("sweep.sizes")?.unwrap_or_else(|| vec![120, 240, 360, 480]),
        };
        if let Some(&d) = sweep.depths.iter().find(|&&d| d == 0 || d > model.depth) {
            return Err(Error::DepthOutOfRange { depth: d, layers: model.depth });
        }
        let report_dir = kv.get::<String>("report.dir")?.map(PathBuf::from);
        kv.finish()?;
        Ok(Self {
            output,
            seed,
            data_dir,
            scenario,
            synth_counts,
            preprocess_input,
            preprocess_size,
            model,
            decoder,
            pretrain,
            pretrain_data,
            pretrain_split,
            pretrained,
            train,
            method,
            grid_lrs,
            grid_wds,
            checkpoint,
            eval_split,
            sweep,
            report_dir,
            canonical,
        })
    }

    /// Parses `path` and applies `key=value` overrides in order.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let mut kv = KeyValues::load(path)?;
        for o in overrides {
            kv.set(o)?;
        }
        Self::from_kv(kv)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(KeyValues::parse(text)?)
    }

    fn data_dir(&self) -> Result<&Path> {
        self.data_dir.as_deref().ok_or_else(|| Error::MissingInput("config key `data.dir` is required".into()))
    }
}

/// Canonical text describing a model and method, stored in checkpoints.
pub fn model_echo(model: &ModelConfig, method: Option<&FinetuneMethod>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "model.image_size = {}", model.image_size);
    let _ = writeln!(s, "model.patch = {}", model.patch);
    let _ = writeln!(s, "model.channels = {}", model.channels);
    let _ = writeln!(s, "model.dim = {}", model.dim);
    let _ = writeln!(s, "model.depth = {}", model.depth);
    let _ = writeln!(s, "model.heads = {}", model.heads);
    let _ = writeln!(s, "model.mlp_ratio = {}", model.mlp_ratio);
    let _ = writeln!(s, "model.num_classes = {}", model.num_classes);
    let _ = writeln!(s, "model.head_hidden = {}", model.head_hidden);
    match method {
        None => {}
        Some(FinetuneMethod::FullFineTune) => s.push_str("method = fft\n"),
        Some(FinetuneMethod::LinearProbe) => s.push_str("method = lp\n"),
        Some(FinetuneMethod::Vpt(c)) => {
            s.push_str("method = vpt\n");
            let _ = writeln!(s, "vpt.variant = {}", c.variant.as_str());
            let _ = writeln!(s, "vpt.p = {}", c.p);
            let _ = writeln!(s, "vpt.strategy = {}", c.strategy.as_str());
            let _ = writeln!(s, "vpt.depth = {}", c.depth);
            let _ = writeln!(s, "vpt.carry = {}", c.carry_prompt_outputs);
        }
    }
    s
}

/// Inverse of [`model_echo`]; `extra` keys (such as a decoder echo) are ignored.
pub fn parse_echo(text: &str) -> Result<(ModelConfig, Option<FinetuneMethod>)> {
    let mut kv = KeyValues::parse(text)?;
    let model = read_model(&mut kv, "model.", 1)?;
    let method = match kv.raw("method") {
        None => None,
        Some(m) => {
            let prompt = read_prompt(&mut kv, "vpt.", model.depth)?;
            Some(parse_method(&m, prompt)?)
        }
    };
    Ok((model, method))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn timing_csv(seconds: f64) -> String {
    format!("metric,value\ntrain_wall_clock_s,{seconds}\n")
}

/// `synth`: writes the scenario (default six-class) to `data.dir`.
pub fn run_synth(cfg: &RunConfig) -> Result<ScenarioSpec> {
    let mut spec = match &cfg.scenario {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::MissingInput(format!("scenario {}: {e}", path.display())))?;
            ScenarioSpec::parse(&text)?
        }
        None => ScenarioSpec::default_six_class(),
    };
    if let Some(c) = cfg.synth_counts {
        spec.counts = c;
    }
    generate_dataset(&spec, cfg.seed, cfg.data_dir()?)?;
    Ok(spec)
}

/// `preprocess`: resizes every split of `preprocess.input` to
/// `preprocess.size` pixels square and writes it to `data.dir`.
pub fn run_preprocess(cfg: &RunConfig) -> Result<usize> {
    let input = cfg.preprocess_input.as_deref().ok_or_else(|| Error::MissingInput("config key `preprocess.input` is required".into()))?;
    let out = cfg.data_dir()?;
    let size = cfg.preprocess_size;
    if size == 0 {
        return Err(Error::BadConfig("preprocess.size must be positive".into()));
    }
    let mut total = 0;
    for split in SPLITS {
        if !input.join(split).is_dir() {
            continue;
        }
        let samples: Vec<ImageSample> = dataset::load_split(input, split)?.iter().map(|img| img.resize(size, size)).collect();
        total += samples.len();
        dataset::write_split(out, split, &samples)?;
    }
    if total == 0 {
        return Err(Error::DatasetUnreadable(format!("no splits under {}", input.display())));
    }
    if let Ok(meta) = fs::read_to_string(input.join(DATASET_META)) {
        write(&out.join(DATASET_META), &meta)?;
    }
    Ok(total)
}

/// `pretrain`: MAE pretraining; writes `pretrained.mpdc` (encoder and
/// decoder), `pretrain_log.csv` and `timing.csv`.
pub fn run_pretrain(cfg: &RunConfig) -> Result<MaeModel<f32>> {
    let root = match &cfg.pretrain_data {
        Some(p) => p.as_path(),
        None => cfg.data_dir()?,
    };
    let images = dataset::load_split(root, &cfg.pretrain_split)?;
    let outcome = pretrain(&images, &cfg.model, &cfg.decoder, &cfg.pretrain)?;
    let mut echo = model_echo(&cfg.model, None);
    let _ = write!(echo, "mae.decoder_dim = {}\nmae.decoder_depth = {}\nmae.decoder_heads = {}\n", cfg.decoder.dim, cfg.decoder.depth, cfg.decoder.heads);
    Checkpoint::from_params(echo, outcome.model.params()).save(&cfg.output.join(PRETRAINED_FILE))?;
    write(&cfg.output.join("pretrain_log.csv"), &pretrain_log_csv(&outcome.log))?;
    write(&cfg.output.join("timing.csv"), &timing_csv(outcome.wall_clock_s))?;
    Ok(outcome.model)
}

/// Encoder from `pretrained` (architecture from its echo), or a seeded fresh
/// encoder when no checkpoint is configured.
pub fn load_encoder(cfg: &RunConfig) -> Result<VitEncoder<f32>> {
    match &cfg.pretrained {
        None => VitEncoder::new(cfg.model.clone(), &mut init_rng(cfg.seed)),
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let (mut arch, _) = parse_echo(&ck.config)?;
            arch.num_classes = cfg.model.num_classes;
            arch.head_hidden = cfg.model.head_hidden;
            let mut enc = VitEncoder::new(arch, &mut init_rng(0))?;
            ck.restore(&mut enc)?;
            Ok(enc)
        }
    }
}

fn save_classifier(model: &Classifier<f32>, method: &FinetuneMethod, path: &Path) -> Result<()> {
    Checkpoint::from_params(model_echo(model.config(), Some(method)), model.params()).save(path)
}

pub fn load_classifier(path: &Path) -> Result<(Classifier<f32>, FinetuneMethod)> {
    let ck = Checkpoint::load(path)?;
    let (model, method) = parse_echo(&ck.config)?;
    let method = method.ok_or_else(|| Error::ConfigMismatch(format!("{} holds no fine-tuned classifier", path.display())))?;
    let mut clf = Classifier::new(model, &method, &mut init_rng(0))?;
    ck.restore(&mut clf)?;
    Ok((clf, method))
}

/// Fine-tunes one method and writes its checkpoint, logs and timing under `dir`.
fn finetune_into(
    cfg: &RunConfig,
    encoder: &VitEncoder<f32>,
    method: &FinetuneMethod,
    train: &[ImageSample],
    val: &[ImageSample],
    dir: &Path,
) -> Result<FinetuneOutcome> {
    let outcome = match (&cfg.grid_lrs, &cfg.grid_wds) {
        (None, None) => finetune(encoder, method, train, val, &cfg.train)?,
        (lrs, wds) => {
            let lrs = lrs.clone().unwrap_or_else(|| vec![cfg.train.base_lr]);
            let wds = wds.clone().unwrap_or_else(|| vec![cfg.train.weight_decay]);
            let grid = grid_search(encoder, method, &lrs, &wds, train, val, &cfg.train)?;
            write(&dir.join("grid.csv"), &grid_csv(&grid.points))?;
            let best = grid.best_point();
            write(&dir.join("grid_best.csv"), &format!("base_lr,weight_decay\n{},{}\n", best.base_lr, best.weight_decay))?;
            grid.outcome
        }
    };
    save_classifier(&outcome.model, method, &dir.join(MODEL_FILE))?;
    write(&dir.join("train_log.csv"), &epoch_log_csv(&outcome.log))?;
    write(&dir.join("timing.csv"), &timing_csv(outcome.wall_clock_s))?;
    Ok(outcome)
}

/// `finetune`: trains `method` on `data.dir` train/val; writes `model.mpdc`,
/// `train_log.csv`, `timing.csv` and, with a grid, `grid.csv`.
pub fn run_finetune(cfg: &RunConfig) -> Result<FinetuneOutcome> {
    let root = cfg.data_dir()?;
    let train = dataset::load_split(root, "train")?;
    let val = dataset::load_split(root, "val")?;
    let encoder = load_encoder(cfg)?;
    finetune_into(cfg, &encoder, &cfg.method, &train, &val, &cfg.output)
}

fn evaluate_model(model: &Classifier<f32>, method: &FinetuneMethod, images: &[ImageSample]) -> Result<MetricsReport> {
    let pipeline = Pipeline::new(model.config(), false);
    let seqs = pipeline.prepare_eval(images)?;
    let labels = labels_of(images)?;
    let pred = predict(model, &pipeline, &seqs)?;
    MetricsReport::new(method.to_string(), &pred, &labels, model.config().num_classes, count_trainable(method, model.config())?)
}

fn write_report(report: &MetricsReport, dir: &Path) -> Result<()> {
    write(&dir.join("metrics.csv"), &report.metrics_csv())?;
    write(&dir.join("confusion.csv"), &report.confusion_csv())
}

/// `eval`: scores `checkpoint` (default `output/model.mpdc`) on `eval.split`
/// and writes `metrics.csv` and `confusion.csv`.
pub fn run_eval(cfg: &RunConfig) -> Result<MetricsReport> {
    let path = cfg.checkpoint.clone().unwrap_or_else(|| cfg.output.join(MODEL_FILE));
    let (model, method) = load_classifier(&path)?;
    let images = dataset::load_split(cfg.data_dir()?, &cfg.eval_split)?;
    let report = evaluate_model(&model, &method, &images)?;
    write_report(&report, &cfg.output)?;
    Ok(report)
}

struct Splits {
    train: Vec<ImageSample>,
    val: Vec<ImageSample>,
    test: Vec<ImageSample>,
}

fn load_splits(cfg: &RunConfig) -> Result<Splits> {
    let root = cfg.data_dir()?;
    Ok(Splits {
        train: dataset::load_split(root, "train")?,
        val: dataset::load_split(root, "val")?,
        test: dataset::load_split(root, "test")?,
    })
}

/// Runs one method into `dir` and returns (val accuracy, test accuracy, seconds).
fn sweep_point(cfg: &RunConfig, encoder: &VitEncoder<f32>, method: &FinetuneMethod, train: &[ImageSample], data: &Splits, dir: &Path) -> Result<(f64, f64, f64)> {
    let outcome = finetune_into(cfg, encoder, method, train, &data.val, dir)?;
    let report = evaluate_model(&outcome.model, method, &data.test)?;
    write_report(&report, dir)?;
    Ok((outcome.best_val_acc, report.accuracy, outcome.wall_clock_s))
}

fn vpt_config(cfg: &RunConfig) -> PromptConfig {
    match &cfg.method {
        FinetuneMethod::Vpt(c) => c.clone(),
        _ => PromptConfig::deep(10, cfg.model.depth),
    }
}

pub const PROMPT_SWEEP_HEADER: &str = "p,val_acc,test_acc,trainable_count,status";

/// One VPT run per prompt count, ascending; failed runs are kept as rows.
pub fn sweep_prompt_count(cfg: &RunConfig) -> Result<String> {
    let data = load_splits(cfg)?;
    let encoder = load_encoder(cfg)?;
    let mut ps = cfg.sweep.p_values.clone();
    ps.sort_unstable();
    ps.dedup();
    let mut csv = format!("{PROMPT_SWEEP_HEADER}\n");
    for p in ps {
        let method = FinetuneMethod::Vpt(PromptConfig { p, ..vpt_config(cfg) });
        let count = count_trainable(&method, encoder_config(&encoder))?.trainable();
        match sweep_point(cfg, &encoder, &method, &data.train, &data, &cfg.output.join(format!("p{p}"))) {
            Ok((val, test, _)) => {
                let _ = writeln!(csv, "{p},{val},{test},{count},ok");
            }
            Err(e) => {
                let _ = writeln!(csv, "{p},NaN,NaN,{count},{}", e.to_string().replace(',', ";"));
            }
        }
    }
    write(&cfg.output.join("sweep_prompt_count.csv"), &csv)?;
    Ok(csv)
}

fn encoder_config(encoder: &VitEncoder<f32>) -> &ModelConfig {
    &encoder.config
}

pub const DEPTH_SWEEP_HEADER: &str = "strategy,depth,inserted_layers,prompt_params,test_acc";

/// One VPT-deep run per (strategy, depth).
pub fn sweep_depth(cfg: &RunConfig) -> Result<String> {
    let data = load_splits(cfg)?;
    let encoder = load_encoder(cfg)?;
    let base = PromptConfig { variant: PromptVariant::Deep, ..vpt_config(cfg) };
    let mut csv = format!("{DEPTH_SWEEP_HEADER}\n");
    for &strategy in &cfg.sweep.strategies {
        for &depth in &cfg.sweep.depths {
            let pc = PromptConfig { strategy, depth, ..base.clone() };
            let layers = select_inserted_layers(&pc, encoder.config.depth)?;
            let method = FinetuneMethod::Vpt(pc);
            let prompt_params = count_trainable(&method, &encoder.config)?.prompt;
            let dir = cfg.output.join(format!("{}_d{depth}", strategy.as_str()));
            let (_, test, _) = sweep_point(cfg, &encoder, &method, &data.train, &data, &dir)?;
            let _ = writeln!(csv, "{},{depth},\"{}\",{prompt_params},{test}", strategy.as_str(), format_layers(&layers));
        }
    }
    write(&cfg.output.join("sweep_depth.csv"), &csv)?;
    Ok(csv)
}

/// Per-class balanced subsets of `size` samples. Each class's samples are
/// shuffled once under `seed`, so smaller subsets are prefixes of larger ones.
pub fn nested_subset(labels: &[usize], size: usize, seed: u64) -> Result<Vec<usize>> {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    if classes == 0 || size % classes != 0 {
        return Err(Error::BadConfig(format!("subset size {size} is not a multiple of {classes} classes")));
    }
    let per = size / classes;
    let mut out = Vec::with_capacity(size);
    for k in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == k).collect();
        if idx.len() < per {
            return Err(Error::InsufficientData { requested: size, available: idx.len() * classes });
        }
        idx.shuffle(&mut stream_rng(seed, &[4, k as u64]));
        out.extend_from_slice(&idx[..per]);
    }
    out.sort_unstable();
    Ok(out)
}

pub const DATASIZE_SWEEP_HEADER: &str = "size,method,test_acc,wall_clock_s";

/// All three methods for each training-set size; subset members are written
/// to `subset_<size>.txt`.
pub fn sweep_datasize(cfg: &RunConfig) -> Result<String> {
    let data = load_splits(cfg)?;
    let labels = labels_of(&data.train)?;
    let mut sizes = cfg.sweep.sizes.clone();
    sizes.sort_unstable();
    let subsets: Vec<(usize, Vec<usize>)> =
        sizes.iter().map(|&s| nested_subset(&labels, s, cfg.seed).map(|v| (s, v))).collect::<Result<_>>()?;
    let encoder = load_encoder(cfg)?;
    let methods = [FinetuneMethod::FullFineTune, FinetuneMethod::LinearProbe, FinetuneMethod::Vpt(vpt_config(cfg))];
    let manifest = dataset::read_manifest(&cfg.data_dir()?.join("train"))?;
    let mut csv = format!("{DATASIZE_SWEEP_HEADER}\n");
    for (size, subset) in &subsets {
        let list: String = subset.iter().map(|&i| format!("{}\n", manifest[i].file)).collect();
        write(&cfg.output.join(format!("subset_{size}.txt")), &list)?;
        let train: Vec<ImageSample> = subset.iter().map(|&i| data.train[i].clone()).collect();
        for method in &methods {
            let dir = cfg.output.join(format!("n{size}_{}", method.tag()));
            let (_, test, secs) = sweep_point(cfg, &encoder, method, &train, &data, &dir)?;
            let _ = writeln!(csv, "{size},{},{test},{secs}", method.tag());
        }
    }
    write(&cfg.output.join("sweep_datasize.csv"), &csv)?;
    Ok(csv)
}

/// `sweep`: dispatches on `sweep.kind`.
pub fn run_sweep(cfg: &RunConfig) -> Result<String> {
    match cfg.sweep.kind {
        Some(SweepKind::PromptCount) => sweep_prompt_count(cfg),
        Some(SweepKind::Depth) => sweep_depth(cfg),
        Some(SweepKind::DataSize) => sweep_datasize(cfg),
        None => Err(Error::BadConfig("config key `sweep.kind` is required (prompt_count, depth or datasize)".into())),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    /// Run directory relative to the report root.
    pub run: String,
    pub method: String,
    pub tuned_fraction: f64,
    pub wall_clock_s: Option<f64>,
    pub accuracy: f64,
}

fn collect_metrics(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(format!("reading {}", dir.display()), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_metrics(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "metrics.csv") {
            out.push(path);
        }
    }
    Ok(())
}

/// Gathers every `metrics.csv` below `dir` (with a sibling `timing.csv` when present).
pub fn collect_report(dir: &Path) -> Result<Vec<ReportRow>> {
    let mut files = Vec::new();
    if dir.is_dir() {
        collect_metrics(dir, &mut files)?;
    }
    if files.is_empty() {
        return Err(Error::NoRunsFound(dir.to_path_buf()));
    }
    files
        .iter()
        .map(|f| {
            let text = fs::read_to_string(f).map_err(|e| Error::io(format!("reading {}", f.display()), e))?;
            let m = parse_metric_rows(&text);
            let num = |k: &str| -> Result<f64> {
                m.get(k)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::DatasetUnreadable(format!("{} lacks `{k}`", f.display())))
            };
            let parent = f.parent().expect("file has a parent");
            let wall_clock_s = fs::read_to_string(parent.join("timing.csv"))
                .ok()
                .and_then(|t| parse_metric_rows(&t).get("train_wall_clock_s").and_then(|v| v.parse().ok()));
            let run = parent.strip_prefix(dir).unwrap_or(parent).display().to_string();
            Ok(ReportRow {
                run: if run.is_empty() { ".".into() } else { run },
                method: m.get("method").cloned().unwrap_or_default(),
                tuned_fraction: num("tuned_fraction")?,
                wall_clock_s,
                accuracy: num("accuracy")?,
            })
        })
        .collect()
}

pub const REPORT_HEADER: &str = "run,method,tuned_params,training_time_s,accuracy";

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut s = format!("{REPORT_HEADER}\n");
    for r in rows {
        let time = r.wall_clock_s.map_or(String::new(), |t| format!("{t:.2}"));
        let _ = writeln!(s, "{},{},{},{time},{}", r.run, r.method, format_percent(r.tuned_fraction), r.accuracy);
    }
    s
}

/// Fixed-width comparison table: method, tuned parameters, training time, accuracy.
pub fn report_table(rows: &[ReportRow]) -> String {
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.run.clone(),
                r.method.clone(),
                format_percent(r.tuned_fraction),
                r.wall_clock_s.map_or("n/a".into(), |t| format!("{t:.1} s")),
                format!("{:.2}%", r.accuracy * 100.0),
            ]
        })
        .collect();
    let header = ["Run", "Method", "Tuned params", "Training time", "Accuracy"];
    let mut widths = header.map(str::len);
    for c in &cells {
        for (w, v) in widths.iter_mut().zip(c) {
            *w = (*w).max(v.len());
        }
    }
    let line = |vals: &[String]| -> String {
        let parts: Vec<String> = vals.iter().zip(widths).map(|(v, w)| format!("{v:<w$}")).collect();
        format!("| {} |\n", parts.join(" | "))
    };
    let mut s = line(&header.map(String::from));
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    s += &format!("|-{}-|\n", rule.join("-|-"));
    for c in &cells {
        s += &line(c);
    }
    s
}

/// `report`: aggregates the runs under `report.dir` (default `output`) into
/// `report.csv` and `report.txt` in `output`; returns the table.
pub fn run_report(cfg: &RunConfig) -> Result<String> {
    let dir = cfg.report_dir.clone().unwrap_or_else(|| cfg.output.clone());
    let rows = collect_report(&dir)?;
    let table = report_table(&rows);
    write(&cfg.output.join("report.csv"), &report_csv(&rows))?;
    write(&cfg.output.join("report.txt"), &table)?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse() {
        let cfg = RunConfig::parse("output = /tmp/x\n").unwrap();
        assert_eq!(cfg.model, ModelConfig::desk(6));
        assert!(matches!(cfg.method, FinetuneMethod::Vpt(_)));
        assert_eq!(cfg.train.peak_lr(), 0.03125);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(matches!(RunConfig::parse("vpt.pp = 3"), Err(Error::BadConfig(_))));
        assert!(matches!(RunConfig::parse("method = sgd"), Err(Error::BadConfig(_))));
        assert!(matches!(RunConfig::parse("vpt.depth = 9"), Err(Error::DepthOutOfRange { depth: 9, layers: 4 })));
        assert!(matches!(RunConfig::parse("mae.mask_ratio = 1.5"), Err(Error::RatioOutOfRange(_))));
        assert!(matches!(RunConfig::parse("grid.base_lr = "), Err(Error::EmptyGrid)));
    }

    #[test]
    fn echo_round_trip() {
        let model = ModelConfig::desk(4);
        for method in [
            FinetuneMethod::FullFineTune,
            FinetuneMethod::LinearProbe,
            FinetuneMethod::Vpt(PromptConfig { strategy: InsertStrategy::TopBottom, ..PromptConfig::deep(3, 2) }),
        ] {
            let (m, back) = parse_echo(&model_echo(&model, Some(&method))).unwrap();
            assert_eq!(m, model);
            assert_eq!(back, Some(method));
        }
    }

    #[test]
    fn nested_subsets_are_prefixes() {
        let labels: Vec<usize> = (0..60).map(|i| i % 6).collect();
        let small = nested_subset(&labels, 12, 3).unwrap();
        let big = nested_subset(&labels, 30, 3).unwrap();
        assert!(small.iter().all(|i| big.contains(i)));
        assert_eq!(nested_subset(&labels, 60, 3).unwrap(), (0..60).collect::<Vec<_>>());
        assert!(matches!(nested_subset(&labels, 66, 3), Err(Error::InsufficientData { .. })));
        let counts = small.iter().fold([0; 6], |mut c, &i| {
            c[labels[i]] += 1;
            c
        });
        assert_eq!(counts, [2; 6]);
    }

    #[test]
    fn empty_report_dir() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(collect_report(dir.path()), Err(Error::NoRunsFound(_))));
    }
}
