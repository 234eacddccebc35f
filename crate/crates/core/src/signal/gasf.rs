//! Gramian Angular Summation Field encoding of a 1D series.

use super::image::{resample_fn, ImageSample, Matrix, SourceKind};
use crate::error::{Error, Result};

/// Min-max rescale onto [-1, 1]; a constant series maps to all zeros.
pub fn rescale_unit(series: &[f64]) -> Vec<f64> {
    let (lo, hi) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    series
        .iter()
        .map(|&v| if span > 0.0 { (2.0 * (v - lo) / span - 1.0).clamp(-1.0, 1.0) } else { 0.0 })
        .collect()
}

fn angles(series: &[f64]) -> Vec<f64> {
    rescale_unit(series).into_iter().map(f64::acos).collect()
}

/// Full `n × n` field `G[i][j] = cos(φi + φj)` with `φ = arccos(x̃)`.
pub fn gasf_matrix(series: &[f64]) -> Result<Matrix> {
    if series.is_empty() {
        return Err(Error::EmptyRecord);
    }
    let phi = angles(series);
    let n = phi.len();
    let mut g = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            g.set(i, j, (phi[i] + phi[j]).cos());
        }
    }
    Ok(g)
}

/// GASF image resampled to `out_size × out_size`. The field is evaluated on
/// demand at the bilinear taps, so long series never materialise `n²` entries.
pub fn gasf_transform(series: &[f64], out_size: usize) -> Result<ImageSample> {
    if series.is_empty() {
        return Err(Error::EmptyRecord);
    }
    if out_size == 0 {
        return Err(Error::ShapeMismatch("GASF output size must be positive".into()));
    }
    let phi = angles(series);
    let n = phi.len();
    let g = resample_fn(n, n, out_size, out_size, |i, j| (phi[i] + phi[j]).cos());
    Ok(ImageSample::from_gray(&g, SourceKind::Gasf))
}
