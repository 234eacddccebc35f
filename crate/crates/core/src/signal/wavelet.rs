//! Multilevel discrete wavelet transform with soft-threshold denoising.
//!
//! The transform uses half-sample symmetric boundary extension and the same
//! coefficient layout as PyWavelets' `symmetric` mode, so coefficient arrays
//! can be compared one-to-one against that implementation.

use crate::error::{Error, Result};

/// Daubechies wavelet with 4 vanishing moments (8 taps), decomposition low-pass.
const DB4_DEC_LO: [f64; 8] = [
    -0.010597401785069032,
    0.0328830116668852,
    0.030841381835560764,
    -0.18703481171909309,
    -0.027983769416859854,
    0.6308807679298589,
    0.7148465705529157,
    0.2303778133088965,
];

/// Orthogonal wavelet described by its four filters.
#[derive(Debug, Clone, PartialEq)]
pub struct Wavelet {
    pub name: &'static str,
    pub dec_lo: Vec<f64>,
    pub dec_hi: Vec<f64>,
    pub rec_lo: Vec<f64>,
    pub rec_hi: Vec<f64>,
}

impl Wavelet {
    /// Builds the quadrature-mirror filter bank from a decomposition low-pass.
    pub fn from_dec_lo(name: &'static str, dec_lo: &[f64]) -> Self {
        let f = dec_lo.len();
        let rec_lo: Vec<f64> = dec_lo.iter().rev().copied().collect();
        let dec_hi: Vec<f64> = (0..f)
            .map(|k| {
                let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
                sign * dec_lo[f - 1 - k]
            })
            .collect();
        let rec_hi = dec_hi.iter().rev().copied().collect();
        Self { name, dec_lo: dec_lo.to_vec(), dec_hi, rec_lo, rec_hi }
    }

    pub fn db4() -> Self {
        Self::from_dec_lo("db4", &DB4_DEC_LO)
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "db4" => Some(Self::db4()),
            "haar" | "db1" => Some(Self::from_dec_lo(
                "haar",
                &[std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2],
            )),
            _ => None,
        }
    }

    pub fn filter_len(&self) -> usize {
        self.dec_lo.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseConfig {
    pub threshold: f64,
    pub levels: usize,
    pub wavelet: String,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self { threshold: 1.0, levels: 4, wavelet: "db4".into() }
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<Wavelet> {
        if !(self.threshold >= 0.0) {
            return Err(Error::BadConfig(format!("denoise threshold {} must be >= 0", self.threshold)));
        }
        if self.levels == 0 {
            return Err(Error::BadConfig("denoise levels must be >= 1".into()));
        }
        Wavelet::by_name(&self.wavelet)
            .ok_or_else(|| Error::BadConfig(format!("unknown wavelet family '{}'", self.wavelet)))
    }
}

/// Shrinks a coefficient towards zero by `lambda`; magnitudes at or below
/// `lambda` become zero.
#[inline]
pub fn soft_threshold(c: f64, lambda: f64) -> f64 {
    let mag = c.abs();
    if mag <= lambda {
        0.0
    } else {
        // (|c| - lambda) keeps the result exactly non-expansive in floating point.
        (mag - lambda).copysign(c)
    }
}

/// Index into the half-sample symmetric extension of a length-`n` signal.
#[inline]
fn reflect(idx: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = idx.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

fn downsample_conv(x: &[f64], filter: &[f64]) -> Vec<f64> {
    let n = x.len();
    let f = filter.len();
    let out_len = (n + f - 1) / 2;
    (0..out_len)
        .map(|o| {
            let i = (2 * o + 1) as isize;
            filter
                .iter()
                .enumerate()
                .map(|(j, h)| h * x[reflect(i - j as isize, n)])
                .sum()
        })
        .collect()
}

/// Adds the upsampled, filtered coefficients into `out` (length `2n - f + 2`).
fn upsample_conv_valid(c: &[f64], filter: &[f64], out: &mut [f64]) {
    let half = filter.len() / 2;
    for (o, i) in (half - 1..c.len()).enumerate() {
        let mut even = 0.0;
        let mut odd = 0.0;
        for j in 0..half {
            even += filter[2 * j] * c[i - j];
            odd += filter[2 * j + 1] * c[i - j];
        }
        out[2 * o] += even;
        out[2 * o + 1] += odd;
    }
}

/// Single-level forward transform: (approximation, detail).
pub fn dwt(x: &[f64], w: &Wavelet) -> (Vec<f64>, Vec<f64>) {
    (downsample_conv(x, &w.dec_lo), downsample_conv(x, &w.dec_hi))
}

/// Single-level inverse transform.
pub fn idwt(approx: &[f64], detail: &[f64], w: &Wavelet) -> Vec<f64> {
    assert_eq!(approx.len(), detail.len(), "coefficient bands must match");
    let f = w.filter_len();
    let len = (2 * approx.len() + 2).saturating_sub(f);
    let mut out = vec![0.0; len];
    upsample_conv_valid(approx, &w.rec_lo, &mut out);
    upsample_conv_valid(detail, &w.rec_hi, &mut out);
    out
}

/// Coefficients of a multilevel decomposition, coarsest detail first.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub approx: Vec<f64>,
    pub details: Vec<Vec<f64>>,
}

pub fn wavedec(x: &[f64], w: &Wavelet, levels: usize) -> Result<Decomposition> {
    if levels == 0 || x.len() < (1usize << levels) {
        return Err(Error::SignalTooShort { len: x.len(), levels });
    }
    let mut approx = x.to_vec();
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let (a, d) = dwt(&approx, w);
        details.push(d);
        approx = a;
    }
    details.reverse();
    Ok(Decomposition { approx, details })
}

pub fn waverec(dec: &Decomposition, w: &Wavelet) -> Vec<f64> {
    let mut a = dec.approx.clone();
    for d in &dec.details {
        if a.len() == d.len() + 1 {
            a.pop();
        }
        a = idwt(&a, d, w);
    }
    a
}

/// Soft-thresholds every detail band and reconstructs; the approximation band
/// is left untouched. Output has the input's length.
pub fn wavelet_denoise(signal: &[f64], cfg: &DenoiseConfig) -> Result<Vec<f64>> {
    let w = cfg.validate()?;
    let mut dec = wavedec(signal, &w, cfg.levels)?;
    for band in &mut dec.details {
        for c in band.iter_mut() {
            *c = soft_threshold(*c, cfg.threshold);
        }
    }
    let mut out = waverec(&dec, &w);
    out.truncate(signal.len());
    Ok(out)
}
