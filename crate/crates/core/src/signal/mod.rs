//! Turning raw multi-channel DAS series into model-ready images.

pub mod augment;
pub mod dataset;
pub mod gasf;
pub mod image;
pub mod patch;
pub mod spatiotemporal;
pub mod stft;
pub mod wavelet;

pub use augment::{augment_and_normalize, AugmentConfig, AugmentDraw};
pub use gasf::{gasf_matrix, gasf_transform};
pub use image::{ImageSample, Matrix, SourceKind};
pub use patch::{patchify, unpatchify, PatchSequence};
pub use spatiotemporal::{assemble_spatiotemporal, spatiotemporal_matrix};
pub use stft::{stft_magnitude, stft_spectrogram};
pub use wavelet::{soft_threshold, wavelet_denoise, DenoiseConfig};

use crate::error::{Error, Result};

/// Multi-channel time series from adjacent sensing channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalRecord {
    pub channels: Vec<Vec<f64>>,
    pub sample_rate: f64,
    pub label: Option<usize>,
    pub duration_s: f64,
}

impl SignalRecord {
    /// Duration is derived from the sample count.
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: f64, label: Option<usize>) -> Result<Self> {
        if !(sample_rate > 0.0) {
            return Err(Error::ShapeMismatch(format!("sample rate {sample_rate} must be positive")));
        }
        let len = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::ShapeMismatch("channels differ in length".into()));
        }
        Ok(Self { duration_s: len as f64 / sample_rate, channels, sample_rate, label })
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty() || self.len() == 0
    }

    /// Per-sample mean over channels.
    pub fn channel_mean(&self) -> Vec<f64> {
        let n = self.channels.len().max(1) as f64;
        (0..self.len()).map(|t| self.channels.iter().map(|c| c[t]).sum::<f64>() / n).collect()
    }

    pub fn denoised(&self, cfg: &DenoiseConfig) -> Result<Self> {
        let channels = self
            .channels
            .iter()
            .map(|c| wavelet_denoise(c, cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { channels, ..self.clone() })
    }
}

/// Renders a record through one of the three image representations. GASF and
/// STFT operate on the channel-mean series.
pub fn render(record: &SignalRecord, kind: SourceKind, size: usize) -> Result<ImageSample> {
    if record.is_empty() {
        return Err(Error::EmptyRecord);
    }
    let img = match kind {
        SourceKind::Spatiotemporal => assemble_spatiotemporal(record, size, size)?,
        SourceKind::Gasf => gasf_transform(&record.channel_mean(), size)?,
        SourceKind::Stft => {
            let series = record.channel_mean();
            let window = stft::DEFAULT_WINDOW.min(series.len());
            let hop = stft::DEFAULT_HOP.min(window);
            stft_spectrogram(&series, record.sample_rate, window, hop, size)?
        }
    };
    Ok(img.with_label(record.label))
}
