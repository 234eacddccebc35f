use super::image::ImageSample;
use crate::error::{Error, Result};

/// Non-overlapping square patches in row-major grid order. Each patch is
/// flattened as (row, column, channel) with the channel fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSequence {
    pub data: Vec<f32>,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    pub channels: usize,
}

impl PatchSequence {
    pub fn len(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn patch_len(&self) -> usize {
        self.patch_h * self.patch_w * self.channels
    }

    pub fn patch(&self, j: usize) -> &[f32] {
        let n = self.patch_len();
        &self.data[j * n..(j + 1) * n]
    }
}

pub fn patchify(img: &ImageSample, patch: usize) -> Result<PatchSequence> {
    if patch == 0 || img.height % patch != 0 {
        return Err(Error::NotDivisible { what: "image height", size: img.height, patch });
    }
    if img.width % patch != 0 {
        return Err(Error::NotDivisible { what: "image width", size: img.width, patch });
    }
    let (gr, gc, c) = (img.height / patch, img.width / patch, img.channels);
    let mut data = Vec::with_capacity(img.pixels.len());
    for r in 0..gr {
        for q in 0..gc {
            for y in r * patch..(r + 1) * patch {
                let start = (y * img.width + q * patch) * c;
                data.extend_from_slice(&img.pixels[start..start + patch * c]);
            }
        }
    }
    Ok(PatchSequence { data, grid_rows: gr, grid_cols: gc, patch_h: patch, patch_w: patch, channels: c })
}

pub fn unpatchify(seq: &PatchSequence) -> ImageSample {
    let (h, w, c) = (seq.grid_rows * seq.patch_h, seq.grid_cols * seq.patch_w, seq.channels);
    let mut img = ImageSample::filled(h, w, c, 0.0);
    let row_len = seq.patch_w * c;
    for r in 0..seq.grid_rows {
        for q in 0..seq.grid_cols {
            let p = seq.patch(r * seq.grid_cols + q);
            for dy in 0..seq.patch_h {
                let y = r * seq.patch_h + dy;
                let start = (y * w + q * seq.patch_w) * c;
                img.pixels[start..start + row_len].copy_from_slice(&p[dy * row_len..(dy + 1) * row_len]);
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::SourceKind;
    use proptest::prelude::*;

    #[test]
    fn base_resolution_patch_count() {
        let img = ImageSample::filled(224, 224, 3, 0.0);
        let seq = patchify(&img, 16).unwrap();
        assert_eq!(seq.len(), 196);
        assert_eq!(seq.patch_len(), 16 * 16 * 3);
    }

    #[test]
    fn single_patch_is_the_image() {
        let pixels: Vec<f32> = (0..16 * 16 * 3).map(|i| i as f32).collect();
        let img = ImageSample::new(16, 16, 3, pixels.clone(), SourceKind::Gasf).unwrap();
        let seq = patchify(&img, 16).unwrap();
        assert_eq!(seq.len(), 1);
        assert_eq!(seq.patch(0), &pixels[..]);
    }

    #[test]
    fn indivisible_rejected() {
        let img = ImageSample::filled(30, 32, 3, 0.0);
        assert!(matches!(patchify(&img, 8), Err(Error::NotDivisible { .. })));
    }

    #[test]
    fn patch_layout_is_row_major() {
        let pixels: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let img = ImageSample::new(4, 4, 1, pixels, SourceKind::Gasf).unwrap();
        let seq = patchify(&img, 2).unwrap();
        assert_eq!(seq.patch(0), &[0., 1., 4., 5.]);
        assert_eq!(seq.patch(1), &[2., 3., 6., 7.]);
        assert_eq!(seq.patch(2), &[8., 9., 12., 13.]);
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(gr in 1usize..5, gc in 1usize..5, p in 1usize..5, c in 1usize..4, seed in any::<u32>()) {
            let (h, w) = (gr * p, gc * p);
            let pixels: Vec<f32> = (0..h * w * c)
                .map(|i| f32::from_bits((seed as u32).wrapping_mul(2654435761).wrapping_add(i as u32 * 40503) % 0x7f00_0000))
                .collect();
            let img = ImageSample::new(h, w, c, pixels, SourceKind::Stft).unwrap();
            let back = unpatchify(&patchify(&img, p).unwrap());
            prop_assert_eq!(back.pixels.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            img.pixels.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
}
