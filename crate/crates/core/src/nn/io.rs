//! Binary model container, magic `FADL1`.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! bytes 0..5   magic "FADL1"
//! u32          layer count
//! per layer:
//!   u32        in_dim
//!   u32        out_dim
//!   u8         activation tag (0 = relu, 1 = sigmoid)
//!   f64 * in_dim * out_dim   weights, row-major
//!   f64 * out_dim            biases
//! ```
//!
//! Round-trips are bit-exact: floats are moved via `to_le_bytes` /
//! `from_le_bytes`, which preserve every payload bit.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

use super::{Activation, LayerParams, Model};

pub const MODEL_MAGIC: &[u8; 5] = b"FADL1";

impl Activation {
    fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Activation> {
        match tag {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Sigmoid),
            t => Err(Error::ModelFormat(format!("unknown activation tag {t}"))),
        }
    }
}

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&(self.num_layers() as u32).to_le_bytes());
        for layer in self.layers() {
            out.extend_from_slice(&(layer.in_dim() as u32).to_le_bytes());
            out.extend_from_slice(&(layer.out_dim() as u32).to_le_bytes());
            out.push(layer.activation.tag());
            for w in layer.weights.iter() {
                out.extend_from_slice(&w.to_le_bytes());
            }
            for b in layer.biases.iter() {
                out.extend_from_slice(&b.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(5)?;
        if magic != MODEL_MAGIC {
            return Err(Error::ModelFormat("bad magic".into()));
        }
        let n_layers = r.u32()? as usize;
        if n_layers == 0 {
            return Err(Error::ModelFormat("zero layers".into()));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let in_dim = r.u32()? as usize;
            let out_dim = r.u32()? as usize;
            let activation = Activation::from_tag(r.u8()?)?;
            let n_w = in_dim
                .checked_mul(out_dim)
                .ok_or_else(|| Error::ModelFormat("dim overflow".into()))?;
            let mut weights = Vec::with_capacity(n_w);
            for _ in 0..n_w {
                weights.push(r.f64()?);
            }
            let mut biases = Vec::with_capacity(out_dim);
            for _ in 0..out_dim {
                biases.push(r.f64()?);
            }
            layers.push(LayerParams {
                weights: Array2::from_shape_vec((in_dim, out_dim), weights)
                    .map_err(|e| Error::ModelFormat(e.to_string()))?,
                biases: Array1::from_vec(biases),
                activation,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::ModelFormat(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Model::from_layers(layers)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        Model::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::ModelFormat("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let m = Model::init(&[7, 5, 3, 1], 17).unwrap();
        let back = Model::from_bytes(&m.to_bytes()).unwrap();
        assert!(back.bit_identical(&m));
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fadl1");
        let m = Model::init(&[4, 2, 1], 3).unwrap();
        m.save(&path).unwrap();
        assert!(Model::load(&path).unwrap().bit_identical(&m));
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let m = Model::init(&[3, 1], 0).unwrap();
        let mut bytes = m.to_bytes();
        assert!(Model::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(Model::from_bytes(&bytes).is_err());
    }

    #[test]
    fn rejects_trailing_bytes() {
        let m = Model::init(&[3, 1], 0).unwrap();
        let mut bytes = m.to_bytes();
        bytes.push(0);
        assert!(Model::from_bytes(&bytes).is_err());
    }

    #[test]
    fn header_layout_is_stable() {
        let m = Model::init(&[2, 1], 0).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(&bytes[0..5], b"FADL1");
        assert_eq!(u32::from_le_bytes(bytes[5..9].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[9..13].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[13..17].try_into().unwrap()), 1);
        assert_eq!(bytes[17], 1); // sigmoid tag
        assert_eq!(bytes.len(), 5 + 4 + (4 + 4 + 1) + 2 * 8 + 8);
    }
}
