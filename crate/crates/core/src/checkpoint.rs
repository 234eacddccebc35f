//! Binary parameter snapshots.
//!
//! Layout, little-endian throughout: magic `MPDC`, `u16` version, `u32`
//! length plus UTF-8 config echo, `u32` tensor count, then per tensor (sorted
//! by name) a `u32` length plus name, `u32` rank, `u32` dims and `f32`
//! values; a trailing CRC-32 covers every preceding byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::nn::{Module, Param};

pub const MAGIC: &[u8; 4] = b"MPDC";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Canonical text of the configuration that produced the parameters.
    pub config: String,
    pub tensors: BTreeMap<String, Array2<f32>>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.corrupt("truncated"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| self.corrupt("invalid UTF-8"))
    }
    fn corrupt(&self, reason: &str) -> Error {
        Error::HeaderMismatch { path: self.path.to_path_buf(), reason: reason.into() }
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

impl Checkpoint {
    pub fn from_params<'a>(config: impl Into<String>, params: impl IntoIterator<Item = &'a Param<f32>>) -> Self {
        let tensors = params.into_iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        Self { config: config.into(), tensors }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_u32(&mut out, self.config.len());
        out.extend_from_slice(self.config.as_bytes());
        put_u32(&mut out, self.tensors.len());
        for (name, t) in &self.tensors {
            put_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, 2);
            put_u32(&mut out, t.nrows());
            put_u32(&mut out, t.ncols());
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// `path` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 2 + 4 || &bytes[..4] != MAGIC {
            return Err(Error::HeaderMismatch { path: path.to_path_buf(), reason: "missing MPDC magic".into() });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body).to_le_bytes() != tail {
            return Err(Error::ChecksumMismatch(path.to_path_buf()));
        }
        let mut r = Reader { bytes: body, pos: 4, path };
        let version = r.u16()?;
        if version != VERSION {
            return Err(r.corrupt(&format!("unsupported version {version}")));
        }
        let config = r.string()?;
        let count = r.u32()? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let dims: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let (rows, cols) = match dims[..] {
                [n] => (1, n),
                [a, b] => (a, b),
                _ => return Err(r.corrupt(&format!("tensor {name} has rank {rank}"))),
            };
            let raw = r.take(rows * cols * 4)?;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            tensors.insert(name, Array2::from_shape_vec((rows, cols), values).expect("consistent shape"));
        }
        if r.pos != body.len() {
            return Err(r.corrupt("trailing bytes"));
        }
        Ok(Self { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::MissingInput(format!("checkpoint {}: {e}", path.display())))?;
        Self::from_bytes(&bytes, path)
    }

    /// Copies stored values into every parameter of `module`; tensors the
    /// module does not own are ignored.
    pub fn restore<M: Module<f32>>(&self, module: &mut M) -> Result<()> {
        for p in module.params_mut() {
            let t = self
                .tensors
                .get(&p.name)
                .ok_or_else(|| Error::ShapeMismatch(format!("checkpoint has no tensor `{}`", p.name)))?;
            if t.dim() != p.value.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor `{}` is {:?}, model expects {:?}",
                    p.name,
                    t.dim(),
                    p.value.dim()
                )));
            }
            p.value.assign(t);
        }
        Ok(())
    }
}

/// Default checkpoint file inside a run directory.
pub fn checkpoint_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.mpdc"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_rng, ModelConfig, VitEncoder};

    #[test]
    fn round_trip_is_bit_exact() {
        let enc: VitEncoder<f32> = VitEncoder::new(ModelConfig::desk(6), &mut init_rng(4)).unwrap();
        let ck = Checkpoint::from_params("model = desk\n", enc.params());
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..4], b"MPDC");
        let back = Checkpoint::from_bytes(&bytes, Path::new("x")).unwrap();
        assert_eq!(back, ck);
        let mut other: VitEncoder<f32> = VitEncoder::new(ModelConfig::desk(6), &mut init_rng(5)).unwrap();
        back.restore(&mut other).unwrap();
        assert_eq!(other, enc);
        let names: Vec<&String> = back.tensors.keys().collect();
        assert!(names.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn any_flipped_byte_is_detected() {
        let enc: VitEncoder<f32> = VitEncoder::new(ModelConfig::desk(2), &mut init_rng(4)).unwrap();
        let bytes = Checkpoint::from_params("", enc.params()).to_bytes();
        for pos in [5, 40, bytes.len() / 2, bytes.len() - 5, bytes.len() - 1] {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x10;
            assert!(matches!(Checkpoint::from_bytes(&bad, Path::new("x")), Err(Error::ChecksumMismatch(_))));
        }
    }

    #[test]
    fn restore_rejects_missing_tensors() {
        let ck = Checkpoint { config: String::new(), tensors: BTreeMap::new() };
        let mut enc: VitEncoder<f32> = VitEncoder::new(ModelConfig::desk(2), &mut init_rng(4)).unwrap();
        assert!(matches!(ck.restore(&mut enc), Err(Error::ShapeMismatch(_))));
    }
}
