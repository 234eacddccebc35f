use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::image::{ImageSample, Matrix, SourceKind};
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 256;
pub const DEFAULT_HOP: usize = 128;
pub const MAGNITUDE_FLOOR: f64 = 1e-10;

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos()).collect()
}

/// Magnitude spectrogram: row `k` is frequency bin `k` (0..=window/2),
/// column `t` is the frame starting at `t * hop`.
pub fn stft_magnitude(signal: &[f64], window_len: usize, hop: usize) -> Result<Matrix> {
    if window_len == 0 || window_len > signal.len() {
        return Err(Error::WindowTooLong { window: window_len, len: signal.len() });
    }
    if hop == 0 || hop > window_len {
        return Err(Error::BadConfig(format!("hop {hop} must be in 1..={window_len}")));
    }
    let frames = (signal.len() - window_len) / hop + 1;
    let bins = window_len / 2 + 1;
    let window = hann(window_len);
    let fft = FftPlanner::new().plan_fft_forward(window_len);
    let mut buf = vec![Complex::new(0.0, 0.0); window_len];
    let mut out = Matrix::zeros(bins, frames);
    for t in 0..frames {
        let frame = &signal[t * hop..t * hop + window_len];
        for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&window) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        for k in 0..bins {
            out.set(k, t, buf[k].norm());
        }
    }
    Ok(out)
}

/// Log-magnitude spectrogram image, bilinearly resampled to
/// `out_size × out_size` and min-max scaled to [0, 1].
pub fn stft_spectrogram(
    signal: &[f64],
    _sample_rate: f64,
    window_len: usize,
    hop: usize,
    out_size: usize,
) -> Result<ImageSample> {
    let mut mag = stft_magnitude(signal, window_len, hop)?;
    for v in &mut mag.data {
        *v = v.max(MAGNITUDE_FLOOR).ln();
    }
    let mut img = mag.resample(out_size, out_size);
    img.min_max_scale();
    Ok(ImageSample::from_gray(&img, SourceKind::Stft))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_signal_gives_flat_zero_image() {
        let img = stft_spectrogram(&[0.0; 1024], 1000.0, 256, 128, 16).unwrap();
        assert!(img.pixels.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn window_longer_than_signal_rejected() {
        assert!(matches!(
            stft_spectrogram(&[0.0; 100], 1000.0, 256, 128, 16),
            Err(Error::WindowTooLong { window: 256, len: 100 })
        ));
    }

    #[test]
    fn frame_count() {
        let m = stft_magnitude(&[0.0; 1024], 256, 128).unwrap();
        assert_eq!((m.rows, m.cols), (129, 7));
    }
}
