use crate::error::{Error, Result};

/// Which signal representation produced an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SourceKind {
    Spatiotemporal,
    Gasf,
    Stft,
}

impl SourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Spatiotemporal => "spatiotemporal",
            SourceKind::Gasf => "gasf",
            SourceKind::Stft => "stft",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "spatiotemporal" => Some(SourceKind::Spatiotemporal),
            "gasf" => Some(SourceKind::Gasf),
            "stft" => Some(SourceKind::Stft),
            _ => None,
        }
    }
}

/// H×W×C image stored row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<f32>,
    pub label: Option<usize>,
    pub source_kind: SourceKind,
    pub normalized: bool,
}

impl ImageSample {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        pixels: Vec<f32>,
        source_kind: SourceKind,
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::ShapeMismatch(format!("empty image {height}x{width}x{channels}")));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} pixels for a {height}x{width}x{channels} image",
                pixels.len()
            )));
        }
        Ok(Self { height, width, channels, pixels, label: None, source_kind, normalized: false })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            pixels: vec![value; height * width * channels],
            label: None,
            source_kind: SourceKind::Spatiotemporal,
            normalized: false,
        }
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn at_mut(&mut self, y: usize, x: usize, c: usize) -> &mut f32 {
        &mut self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// Builds a 3-channel image by replicating a single-channel matrix.
    pub fn from_gray(gray: &Matrix, source_kind: SourceKind) -> Self {
        let mut pixels = Vec::with_capacity(gray.rows * gray.cols * 3);
        for &v in &gray.data {
            let v = v as f32;
            pixels.extend_from_slice(&[v, v, v]);
        }
        Self {
            height: gray.rows,
            width: gray.cols,
            channels: 3,
            pixels,
            label: None,
            source_kind,
            normalized: false,
        }
    }

    /// Bilinear resize (half-pixel centres, edge clamped).
    pub fn resize(&self, out_h: usize, out_w: usize) -> Self {
        if out_h == self.height && out_w == self.width {
            return self.clone();
        }
        let ys = axis_taps(self.height, out_h);
        let xs = axis_taps(self.width, out_w);
        let c = self.channels;
        let mut pixels = vec![0f32; out_h * out_w * c];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                for ch in 0..c {
                    let top = lerp(self.at(y0, x0, ch) as f64, self.at(y0, x1, ch) as f64, fx);
                    let bot = lerp(self.at(y1, x0, ch) as f64, self.at(y1, x1, ch) as f64, fx);
                    pixels[(oy * out_w + ox) * c + ch] = lerp(top, bot, fy) as f32;
                }
            }
        }
        Self { height: out_h, width: out_w, pixels, ..self.clone_meta() }
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Self {
        assert!(top + h <= self.height && left + w <= self.width, "crop out of bounds");
        let c = self.channels;
        let mut pixels = Vec::with_capacity(h * w * c);
        for y in top..top + h {
            let start = (y * self.width + left) * c;
            pixels.extend_from_slice(&self.pixels[start..start + w * c]);
        }
        Self { height: h, width: w, pixels, ..self.clone_meta() }
    }

    pub fn flip_horizontal(&self) -> Self {
        let c = self.channels;
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                let start = (y * self.width + x) * c;
                pixels.extend_from_slice(&self.pixels[start..start + c]);
            }
        }
        Self { pixels, ..self.clone_meta_sized() }
    }

    fn clone_meta(&self) -> Self {
        Self {
            height: 0,
            width: 0,
            channels: self.channels,
            pixels: Vec::new(),
            label: self.label,
            source_kind: self.source_kind,
            normalized: self.normalized,
        }
    }

    fn clone_meta_sized(&self) -> Self {
        Self { height: self.height, width: self.width, ..self.clone_meta() }
    }
}

/// Dense row-major f64 matrix used by the signal transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Bilinear resample with the same convention as [`ImageSample::resize`].
    pub fn resample(&self, out_rows: usize, out_cols: usize) -> Matrix {
        resample_fn(self.rows, self.cols, out_rows, out_cols, |r, c| self.get(r, c))
    }

    /// Maps values affinely onto [0, 1]; a constant matrix becomes all zeros.
    pub fn min_max_scale(&mut self) {
        let (lo, hi) = self
            .data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = hi - lo;
        for v in &mut self.data {
            *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
        }
    }
}

/// Bilinear resampling of an implicit `rows × cols` grid given by `value`.
pub(crate) fn resample_fn(
    rows: usize,
    cols: usize,
    out_rows: usize,
    out_cols: usize,
    value: impl Fn(usize, usize) -> f64,
) -> Matrix {
    let ys = axis_taps(rows, out_rows);
    let xs = axis_taps(cols, out_cols);
    let mut out = Matrix::zeros(out_rows, out_cols);
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            let top = lerp(value(y0, x0), value(y0, x1), fx);
            let bot = lerp(value(y1, x0), value(y1, x1), fx);
            out.set(oy, ox, lerp(top, bot, fy));
        }
    }
    out
}

/// Source taps `(lo, hi, frac)` for each output coordinate.
pub(crate) fn axis_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a + (b - a) * t
    }
}
