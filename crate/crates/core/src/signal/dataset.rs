//! On-disk image datasets.
//!
//! Layout: one directory per split, each holding `manifest.txt`
//! (`<file>,<label>` per line) and one binary file per sample:
//!
//! ```text
//! "DASI" | version: u16 | height: u32 | width: u32 | channels: u32 | f32 × H·W·C
//! ```
//!
//! All integers and floats are little-endian; pixels are row-major with
//! interleaved channels.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::image::{ImageSample, SourceKind};
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: &[u8; 4] = b"DASI";
pub const IMAGE_VERSION: u16 = 1;
pub const MANIFEST: &str = "manifest.txt";
pub const DATASET_META: &str = "dataset.txt";
const HEADER_LEN: usize = 4 + 2 + 4 * 3;

pub fn encode_image(img: &ImageSample) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * img.pixels.len());
    buf.extend_from_slice(IMAGE_MAGIC);
    buf.extend_from_slice(&IMAGE_VERSION.to_le_bytes());
    for dim in [img.height, img.width, img.channels] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in &img.pixels {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_image(bytes: &[u8], path: &Path) -> Result<ImageSample> {
    let mismatch = |reason: String| Error::HeaderMismatch { path: path.to_path_buf(), reason };
    if bytes.len() < HEADER_LEN || &bytes[..4] != IMAGE_MAGIC {
        return Err(mismatch("missing DASI magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != IMAGE_VERSION {
        return Err(mismatch(format!("unsupported version {version}")));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(0), dim(1), dim(2));
    let body = &bytes[HEADER_LEN..];
    if h == 0 || w == 0 || c == 0 || body.len() != 4 * h * w * c {
        return Err(mismatch(format!("header {h}x{w}x{c} does not match {} payload bytes", body.len())));
    }
    let pixels = body.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    ImageSample::new(h, w, c, pixels, SourceKind::Spatiotemporal)
}

pub fn write_image(path: &Path, img: &ImageSample) -> Result<()> {
    fs::write(path, encode_image(img)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_image(path: &Path) -> Result<ImageSample> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_image(&bytes, path)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub file: String,
    pub label: usize,
}

pub fn read_manifest(split_dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = split_dir.join(MANIFEST);
    let corrupt = |reason: String| Error::CorruptManifest { path: path.clone(), reason };
    let text = fs::read_to_string(&path).map_err(|e| corrupt(e.to_string()))?;
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (file, label) = line
            .split_once(',')
            .ok_or_else(|| corrupt(format!("line {}: expected '<file>,<label>'", n + 1)))?;
        let label = label
            .trim()
            .parse()
            .map_err(|_| corrupt(format!("line {}: bad label '{label}'", n + 1)))?;
        entries.push(ManifestEntry { file: file.trim().to_string(), label });
    }
    if entries.is_empty() {
        return Err(corrupt("no records".into()));
    }
    Ok(entries)
}

pub fn sample_file_name(index: usize) -> String {
    format!("{index:06}.dasi")
}

/// Writes images and their manifest into `root/split`. Every image must carry a label.
pub fn write_split(root: &Path, split: &str, samples: &[ImageSample]) -> Result<()> {
    let dir = root.join(split);
    fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut manifest = String::new();
    for (i, img) in samples.iter().enumerate() {
        let label = img
            .label
            .ok_or_else(|| Error::ShapeMismatch(format!("sample {i} of split {split} has no label")))?;
        let name = sample_file_name(i);
        write_image(&dir.join(&name), img)?;
        manifest.push_str(&format!("{name},{label}\n"));
    }
    let path = dir.join(MANIFEST);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    f.write_all(manifest.as_bytes())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Reads `root/dataset.txt` (if present) for the representation tag.
pub fn dataset_source_kind(root: &Path) -> SourceKind {
    fs::read_to_string(root.join(DATASET_META))
        .ok()
        .and_then(|text| {
            text.lines().find_map(|l| {
                let (k, v) = l.split_once('=')?;
                (k.trim() == "representation").then(|| SourceKind::parse(v.trim())).flatten()
            })
        })
        .unwrap_or(SourceKind::Spatiotemporal)
}

pub fn split_dir(root: &Path, split: &str) -> PathBuf {
    root.join(split)
}

/// Loads every sample of a split in manifest order, labels attached.
pub fn load_split(root: &Path, split: &str) -> Result<Vec<ImageSample>> {
    let dir = split_dir(root, split);
    if !dir.is_dir() {
        return Err(Error::DatasetUnreadable(format!("no split directory {}", dir.display())));
    }
    let kind = dataset_source_kind(root);
    read_manifest(&dir)?
        .into_iter()
        .map(|e| {
            let mut img = read_image(&dir.join(&e.file))?;
            img.label = Some(e.label);
            img.source_kind = kind;
            Ok(img)
        })
        .collect()
}
