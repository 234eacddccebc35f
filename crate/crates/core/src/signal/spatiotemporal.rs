use super::image::{axis_taps, ImageSample, Matrix, SourceKind};
use super::SignalRecord;
use crate::error::{Error, Result};

/// Channel × time matrix: row `c` holds channel `c`, column `t` holds sample `t`.
pub fn spatiotemporal_matrix(record: &SignalRecord) -> Result<Matrix> {
    let rows = record.channels.len();
    let cols = record.len();
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyRecord);
    }
    let mut m = Matrix::zeros(rows, cols);
    for (r, ch) in record.channels.iter().enumerate() {
        m.data[r * cols..(r + 1) * cols].copy_from_slice(ch);
    }
    Ok(m)
}

/// Stacks channels into a 2D image: channel rows are replicated evenly to
/// `out_h`, the time axis is linearly resampled to `out_w`, values are
/// min-max scaled to [0, 1] and the result is copied into three channels.
pub fn assemble_spatiotemporal(record: &SignalRecord, out_h: usize, out_w: usize) -> Result<ImageSample> {
    let m = spatiotemporal_matrix(record)?;
    if out_h < m.rows || out_w == 0 {
        return Err(Error::ShapeMismatch(format!(
            "cannot place {} channels into a {out_h}x{out_w} image",
            m.rows
        )));
    }
    let taps = axis_taps(m.cols, out_w);
    let mut img = Matrix::zeros(out_h, out_w);
    for y in 0..out_h {
        let ch = y * m.rows / out_h;
        for (x, &(t0, t1, f)) in taps.iter().enumerate() {
            let a = m.get(ch, t0);
            let v = if f == 0.0 { a } else { a + (m.get(ch, t1) - a) * f };
            img.set(y, x, v);
        }
    }
    img.min_max_scale();
    Ok(ImageSample::from_gray(&img, SourceKind::Spatiotemporal).with_label(record.label))
}
