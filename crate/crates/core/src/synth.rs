//! Synthetic DAS-like scenarios: Poisson impulse trains filtered by a damped
//! oscillation in a class-specific band, spread over neighbouring channels
//! and buried in white noise, then denoised and rendered to images.
//!
//! Amplitude plays the role of a heavier or lighter walker and the carrier
//! band that of footwear, so the classes differ along those two axes.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::nn::stream_rng;
use crate::signal::dataset::{self, DATASET_META};
use crate::signal::{render, DenoiseConfig, ImageSample, SignalRecord, SourceKind};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpec {
    pub class_id: usize,
    /// Mean events per second.
    pub impulse_rate: f64,
    pub impulse_amplitude: f64,
    /// Each event's amplitude is drawn uniformly within ± this fraction.
    pub amplitude_jitter: f64,
    pub active_channels: Vec<usize>,
    pub carrier_band: (f64, f64),
    pub noise_std: f64,
}

/// Samples per class in each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: &str) -> usize {
        match split {
            "train" => self.train,
            "val" => self.val,
            _ => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub class_specs: Vec<ClassSpec>,
    pub channels: usize,
    pub sample_rate: f64,
    pub duration_s: f64,
    pub counts: SplitCounts,
    /// Side length of the rendered square images.
    pub image_size: usize,
    pub representation: SourceKind,
    /// `None` skips wavelet denoising.
    pub denoise: Option<DenoiseConfig>,
}

fn class(id: usize, amp: f64, band: (f64, f64), channels: std::ops::RangeInclusive<usize>) -> ClassSpec {
    ClassSpec {
        class_id: id,
        impulse_rate: 24.0,
        impulse_amplitude: amp,
        amplitude_jitter: 0.2,
        active_channels: channels.collect(),
        carrier_band: band,
        noise_std: 0.5,
    }
}

/// Soft soles damp high frequencies.
const SOFT_BAND: (f64, f64) = (2.0, 5.0);
const HARD_BAND: (f64, f64) = (9.0, 14.0);
/// Hard soles also strike harder.
const HARD_GAIN: f64 = 2.5;

/// One class per (walker weight, sole) pair, soft sole first. Heavier
/// walkers excite a wider stretch of fibre around channels 3-4.
fn walkers(weights: &[f64]) -> Vec<ClassSpec> {
    weights
        .iter()
        .enumerate()
        .flat_map(|(k, &w)| [(w, SOFT_BAND, k), (w * HARD_GAIN, HARD_BAND, k)])
        .enumerate()
        .map(|(id, (amp, band, k))| class(id, amp, band, 3 - k.min(3)..=4 + k.min(3)))
        .collect()
}

impl ScenarioSpec {
    /// Six classes, three walker weights crossed with two sole types,
    /// 80/40/300 samples per class.
    pub fn default_six_class() -> Self {
        Self::base("six-class", walkers(&[1.0, 2.1, 4.5]), SplitCounts { train: 80, val: 40, test: 300 })
    }

    /// Four classes, two walker weights crossed with two sole types.
    pub fn default_four_class() -> Self {
        Self::base("four-class", walkers(&[1.0, 3.0]), SplitCounts { train: 80, val: 40, test: 300 })
    }

    /// Two classes differing only by a 3× impulse amplitude.
    pub fn amplitude_pair() -> Self {
        let class_specs = vec![class(0, 1.0, SOFT_BAND, 0..=7), class(1, 3.0, SOFT_BAND, 0..=7)];
        Self::base("amplitude-pair", class_specs, SplitCounts { train: 80, val: 40, test: 300 })
    }

    fn base(name: &str, class_specs: Vec<ClassSpec>, counts: SplitCounts) -> Self {
        Self {
            name: name.into(),
            class_specs,
            channels: 8,
            sample_rate: 64.0,
            duration_s: 1.0,
            counts,
            image_size: 32,
            representation: SourceKind::Spatiotemporal,
            denoise: Some(DenoiseConfig::default()),
        }
    }

    pub fn with_counts(mut self, train: usize, val: usize, test: usize) -> Self {
        self.counts = SplitCounts { train, val, test };
        self
    }

    pub fn num_classes(&self) -> usize {
        self.class_specs.len()
    }

    pub fn samples_per_record(&self) -> usize {
        (self.duration_s * self.sample_rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.class_specs.is_empty() {
            return bad("scenario has no classes".into());
        }
        let c = &self.counts;
        if c.train + c.val + c.test == 0 {
            return bad("split counts are all zero".into());
        }
        if self.channels == 0 || !(self.sample_rate > 0.0) || !(self.duration_s > 0.0) || self.samples_per_record() == 0 {
            return bad("channels, sample rate and duration must be positive".into());
        }
        if self.image_size < self.channels {
            return bad(format!("image size {} smaller than channel count {}", self.image_size, self.channels));
        }
        if let Some(d) = &self.denoise {
            d.validate().map_err(|e| Error::InvalidSpec(e.to_string()))?;
            if self.samples_per_record() < 1 << d.levels {
                return bad(format!("{} samples too short for {} wavelet levels", self.samples_per_record(), d.levels));
            }
        }
        for (i, cs) in self.class_specs.iter().enumerate() {
            if cs.class_id != i {
                return bad(format!("class ids must be 0..{} in order", self.class_specs.len()));
            }
            if !(cs.impulse_rate > 0.0) {
                return bad(format!("class {i}: impulse_rate must be > 0"));
            }
            if !(0.0..1.0).contains(&cs.amplitude_jitter) {
                return bad(format!("class {i}: amplitude_jitter must lie in [0, 1)"));
            }
            let (lo, hi) = cs.carrier_band;
            if !(lo > 0.0 && lo < hi && hi < self.sample_rate / 2.0) {
                return bad(format!("class {i}: carrier band ({lo}, {hi}) must satisfy 0 < low < high < sample_rate/2"));
            }
            if cs.active_channels.is_empty() || cs.active_channels.iter().any(|&ch| ch >= self.channels) {
                return bad(format!("class {i}: active channels must be a non-empty subset of 0..{}", self.channels));
            }
            if !(cs.noise_std >= 0.0) || !(cs.impulse_amplitude >= 0.0) {
                return bad(format!("class {i}: amplitude and noise_std must be non-negative"));
            }
        }
        Ok(())
    }

    /// Reads the scenario keys from `kv`. Keys are documented in the README;
    /// class keys take the form `class.<id>.<field>`.
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self> {
        let inv = |e: Error| Error::InvalidSpec(e.to_string());
        let mut spec = Self::default_six_class();
        spec.name = kv.get_or("name", spec.name).map_err(inv)?;
        spec.channels = kv.get_or("channels", spec.channels).map_err(inv)?;
        spec.sample_rate = kv.get_or("sample_rate", spec.sample_rate).map_err(inv)?;
        spec.duration_s = kv.get_or("duration_s", spec.duration_s).map_err(inv)?;
        spec.image_size = kv.get_or("image_size", spec.image_size).map_err(inv)?;
        if let Some(c) = kv.get_list::<usize>("counts").map_err(inv)? {
            let [train, val, test] = c[..] else {
                return Err(Error::InvalidSpec("counts must be `train, val, test`".into()));
            };
            spec.counts = SplitCounts { train, val, test };
        }
        if let Some(r) = kv.raw("representation") {
            spec.representation =
                SourceKind::parse(&r).ok_or_else(|| Error::InvalidSpec(format!("unknown representation `{r}`")))?;
        }
        let threshold: f64 = kv.get_or("denoise.threshold", 1.0).map_err(inv)?;
        let levels: usize = kv.get_or("denoise.levels", 4).map_err(inv)?;
        let wavelet: String = kv.get_or("denoise.wavelet", "db4".to_string()).map_err(inv)?;
        spec.denoise = kv.get_bool("denoise", true).map_err(inv)?.then_some(DenoiseConfig { threshold, levels, wavelet });

        let ids: std::collections::BTreeSet<usize> = kv
            .keys()
            .filter_map(|k| k.strip_prefix("class.")?.split_once('.')?.0.parse().ok())
            .collect();
        if !ids.is_empty() {
            let all: Vec<usize> = (0..spec.channels).collect();
            let mut classes = Vec::new();
            for id in ids {
                let key = |f: &str| format!("class.{id}.{f}");
                let band = kv
                    .get_list::<f64>(&key("carrier_band"))
                    .map_err(inv)?
                    .ok_or_else(|| Error::InvalidSpec(format!("missing {}", key("carrier_band"))))?;
                let [lo, hi] = band[..] else {
                    return Err(Error::InvalidSpec(format!("{} must be `low, high`", key("carrier_band"))));
                };
                classes.push(ClassSpec {
                    class_id: id,
                    impulse_rate: kv.require(&key("impulse_rate")).map_err(inv)?,
                    impulse_amplitude: kv.require(&key("impulse_amplitude")).map_err(inv)?,
                    amplitude_jitter: kv.get_or(&key("amplitude_jitter"), 0.0).map_err(inv)?,
                    active_channels: kv.get_list(&key("active_channels")).map_err(inv)?.unwrap_or_else(|| all.clone()),
                    carrier_band: (lo, hi),
                    noise_std: kv.get_or(&key("noise_std"), 0.0).map_err(inv)?,
                });
            }
            spec.class_specs = classes;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        let spec = Self::from_kv(&mut kv)?;
        kv.finish().map_err(|e| Error::InvalidSpec(e.to_string()))?;
        Ok(spec)
    }

    /// Scenario file text that parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(", ");
        let _ = writeln!(s, "name = {}", self.name);
        let _ = writeln!(s, "channels = {}", self.channels);
        let _ = writeln!(s, "sample_rate = {}", self.sample_rate);
        let _ = writeln!(s, "duration_s = {}", self.duration_s);
        let _ = writeln!(s, "image_size = {}", self.image_size);
        let _ = writeln!(s, "representation = {}", self.representation.as_str());
        let c = self.counts;
        let _ = writeln!(s, "counts = {}, {}, {}", c.train, c.val, c.test);
        match &self.denoise {
            Some(d) => {
                let _ = writeln!(s, "denoise = true");
                let _ = writeln!(s, "denoise.threshold = {}", d.threshold);
                let _ = writeln!(s, "denoise.levels = {}", d.levels);
                let _ = writeln!(s, "denoise.wavelet = {}", d.wavelet);
            }
            None => {
                let _ = writeln!(s, "denoise = false");
            }
        }
        for cs in &self.class_specs {
            let id = cs.class_id;
            let _ = writeln!(s, "class.{id}.impulse_rate = {}", cs.impulse_rate);
            let _ = writeln!(s, "class.{id}.impulse_amplitude = {}", cs.impulse_amplitude);
            let _ = writeln!(s, "class.{id}.amplitude_jitter = {}", cs.amplitude_jitter);
            let _ = writeln!(s, "class.{id}.active_channels = {}", list(&cs.active_channels));
            let _ = writeln!(s, "class.{id}.carrier_band = {}, {}", cs.carrier_band.0, cs.carrier_band.1);
            let _ = writeln!(s, "class.{id}.noise_std = {}", cs.noise_std);
        }
        s
    }
}

/// Raw multi-channel record for one sample of class `cs`.
pub fn synthesize_record<R: Rng + ?Sized>(spec: &ScenarioSpec, cs: &ClassSpec, rng: &mut R) -> SignalRecord {
    let n = spec.samples_per_record();
    let fs = spec.sample_rate;
    let mut channels = vec![vec![0.0; n]; spec.channels];
    let gaps = Exp::new(cs.impulse_rate).expect("positive rate");
    let lo = *cs.active_channels.iter().min().expect("non-empty") as f64;
    let hi = *cs.active_channels.iter().max().expect("non-empty") as f64;
    let midpoint = 0.5 * (lo + hi);
    let mut t = gaps.sample(rng);
    while t < spec.duration_s {
        let amp = cs.impulse_amplitude * (1.0 + cs.amplitude_jitter * rng.random_range(-1.0..=1.0));
        let freq = rng.random_range(cs.carrier_band.0..=cs.carrier_band.1);
        let phase = rng.random_range(0.0..2.0 * PI);
        let center = midpoint + rng.random_range(-0.5..=0.5);
        // Decays to 1/e over three carrier periods.
        let tau = 3.0 / freq;
        let start = (t * fs).ceil() as usize;
        let end = (((t + 5.0 * tau) * fs).ceil() as usize).min(n);
        for sample in start..end {
            let dt = sample as f64 / fs - t;
            let v = amp * (-dt / tau).exp() * (2.0 * PI * freq * dt + phase).sin();
            for &ch in &cs.active_channels {
                let gain = 1.0 / (1.0 + (ch as f64 - center).abs());
                channels[ch][sample] += gain * v;
            }
        }
        t += gaps.sample(rng);
    }
    if cs.noise_std > 0.0 {
        let noise = Normal::new(0.0, cs.noise_std).expect("finite std");
        for ch in &mut channels {
            for v in ch.iter_mut() {
                *v += noise.sample(rng);
            }
        }
    }
    SignalRecord::new(channels, fs, Some(cs.class_id)).expect("consistent channel lengths")
}

fn split_id(split: &str) -> u64 {
    SPLITS.iter().position(|s| *s == split).unwrap_or(SPLITS.len()) as u64
}

/// Sample `index` of `split`: classes are interleaved, and each sample draws
/// from its own stream keyed by (seed, split, class, per-class index), so
/// counts never shift earlier samples.
pub fn generate_sample(spec: &ScenarioSpec, seed: u64, split: &str, index: usize) -> Result<ImageSample> {
    render(&generate_record(spec, seed, split, index)?, spec.representation, spec.image_size)
}

/// The denoised record behind [`generate_sample`].
pub fn generate_record(spec: &ScenarioSpec, seed: u64, split: &str, index: usize) -> Result<SignalRecord> {
    let k = spec.num_classes();
    let cs = &spec.class_specs[index % k];
    let mut rng = stream_rng(seed, &[split_id(split), cs.class_id as u64, (index / k) as u64]);
    let record = synthesize_record(spec, cs, &mut rng);
    match &spec.denoise {
        Some(d) => record.denoised(d),
        None => Ok(record),
    }
}

pub fn generate_split(spec: &ScenarioSpec, seed: u64, split: &str) -> Result<Vec<ImageSample>> {
    spec.validate()?;
    let total = spec.counts.get(split) * spec.num_classes();
    (0..total).map(|i| generate_sample(spec, seed, split, i)).collect()
}

/// Writes all three splits plus `dataset.txt` and `scenario.txt` under `root`.
pub fn generate_dataset(spec: &ScenarioSpec, seed: u64, root: &Path) -> Result<()> {
    spec.validate()?;
    for split in SPLITS.into_iter().filter(|s| spec.counts.get(s) > 0) {
        let samples = generate_split(spec, seed, split)?;
        dataset::write_split(root, split, &samples)?;
    }
    let meta = format!(
        "name = {}\nrepresentation = {}\nclasses = {}\nseed = {seed}\n",
        spec.name,
        spec.representation.as_str(),
        spec.num_classes()
    );
    write_text(&root.join(DATASET_META), &meta)?;
    write_text(&root.join("scenario.txt"), &spec.to_text())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Mean squared value over all channels and samples of a record.
pub fn record_energy(record: &SignalRecord) -> f64 {
    let n = (record.channels.len() * record.len()).max(1) as f64;
    record.channels.iter().flatten().map(|v| v * v).sum::<f64>() / n
}

/// Mean squared deviation of the first image channel from its mean, the
/// energy of the pixel fluctuations.
pub fn mean_energy(img: &ImageSample) -> f64 {
    let n = img.height * img.width;
    let px = |i: usize| img.pixels[i * img.channels] as f64;
    let mean = (0..n).map(px).sum::<f64>() / n as f64;
    (0..n).map(|i| (px(i) - mean).powi(2)).sum::<f64>() / n as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub count: usize,
    pub energy_mean: f64,
    pub energy_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSummary {
    pub name: String,
    pub count: usize,
    /// (height, width, channels) shared by every sample.
    pub shape: (usize, usize, usize),
    pub classes: BTreeMap<usize, ClassStats>,
}

/// Reads every split present under `root` and summarises it.
pub fn describe_dataset(root: &Path) -> Result<Vec<SplitSummary>> {
    let mut out = Vec::new();
    for split in SPLITS {
        let dir = root.join(split);
        if !dir.is_dir() {
            continue;
        }
        let entries = dataset::read_manifest(&dir)?;
        let samples = dataset::load_split(root, split)?;
        let first = &samples[0];
        let shape = (first.height, first.width, first.channels);
        let mut energies: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (img, entry) in samples.iter().zip(&entries) {
            if (img.height, img.width, img.channels) != shape {
                return Err(Error::HeaderMismatch {
                    path: dir.join(&entry.file),
                    reason: format!("shape {}x{}x{} differs from {:?}", img.height, img.width, img.channels, shape),
                });
            }
            energies.entry(entry.label).or_default().push(mean_energy(img));
        }
        let classes = energies
            .into_iter()
            .map(|(label, e)| {
                let n = e.len() as f64;
                let mean = e.iter().sum::<f64>() / n;
                let var = e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                (label, ClassStats { count: e.len(), energy_mean: mean, energy_std: var.sqrt() })
            })
            .collect();
        out.push(SplitSummary { name: split.into(), count: samples.len(), shape, classes });
    }
    if out.is_empty() {
        return Err(Error::CorruptManifest { path: root.to_path_buf(), reason: "no split directories".into() });
    }
    Ok(out)
}

/// One-dimensional threshold classifier: classes are ordered by their mean
/// feature value and separated at the midpoints between adjacent means.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdClassifier {
    order: Vec<usize>,
    cuts: Vec<f64>,
}

impl ThresholdClassifier {
    pub fn fit(features: &[f64], labels: &[usize]) -> Self {
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for (&f, &l) in features.iter().zip(labels) {
            let e = sums.entry(l).or_default();
            e.0 += f;
            e.1 += 1;
        }
        let mut means: Vec<(usize, f64)> = sums.into_iter().map(|(l, (s, n))| (l, s / n as f64)).collect();
        means.sort_by(|a, b| a.1.total_cmp(&b.1));
        let cuts = means.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1)).collect();
        Self { order: means.into_iter().map(|(l, _)| l).collect(), cuts }
    }

    pub fn predict(&self, feature: f64) -> usize {
        self.order[self.cuts.iter().take_while(|&&c| feature > c).count()]
    }

    pub fn accuracy(&self, features: &[f64], labels: &[usize]) -> f64 {
        let hits = features.iter().zip(labels).filter(|(&f, &l)| self.predict(f) == l).count();
        hits as f64 / labels.len().max(1) as f64
    }
}
