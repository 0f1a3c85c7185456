//! `AERO` binary tensor container.
//!
//! Single tensor layout (all integers little-endian):
//!
//! | bytes        | field                                  |
//! |--------------|----------------------------------------|
//! | 4            | magic `AERO`                           |
//! | 1            | format version (`1`)                   |
//! | 1            | dtype tag (`0` = f32, `1` = f64)       |
//! | 1            | rank `r`                               |
//! | 4 * r        | dims, u32 each                         |
//! | elem * prod  | row-major payload                      |
//!
//! A named bundle uses dtype tag [`BUNDLE_TAG`] in place of an element type,
//! followed by a u32 entry count and, per entry, a u16 name length, the UTF-8
//! name, then dtype, rank, dims and payload exactly as above.

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"AERO";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 0;
pub const DTYPE_F64: u8 = 1;
pub const BUNDLE_TAG: u8 = 0xB0;

#[derive(Debug, Error)]
pub enum TensorFileError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {0:?}, expected \"AERO\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    BadVersion(u8),
    #[error("unknown dtype tag {0}")]
    BadDtype(u8),
    #[error("expected {expected}, found {found}")]
    Kind { expected: &'static str, found: &'static str },
    #[error("tensor shape {dims:?} does not match payload of {len} elements")]
    ShapeMismatch { dims: Vec<usize>, len: usize },
    #[error("invalid tensor name: {0}")]
    BadName(String),
    #[error("missing tensor {0:?} in bundle")]
    Missing(String),
    #[error("trailing bytes after tensor payload")]
    Trailing,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> u8 {
        match self {
            TensorData::F32(_) => DTYPE_F32,
            TensorData::F64(_) => DTYPE_F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self, TensorFileError> {
        let expected: usize = dims.iter().product();
        if expected != data.len() || dims.iter().any(|&d| d > u32::MAX as usize) || dims.len() > u8::MAX as usize {
            return Err(TensorFileError::ShapeMismatch { dims, len: data.len() });
        }
        Ok(Self { dims, data })
    }

    pub fn f32(dims: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorFileError> {
        Self::new(dims, TensorData::F32(data))
    }

    pub fn f64(dims: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorFileError> {
        Self::new(dims, TensorData::F64(data))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_f32(self) -> Result<Vec<f32>, TensorFileError> {
        match self.data {
            TensorData::F32(v) => Ok(v),
            TensorData::F64(_) => Err(TensorFileError::Kind { expected: "f32 tensor", found: "f64 tensor" }),
        }
    }

    pub fn into_f64(self) -> Result<Vec<f64>, TensorFileError> {
        match self.data {
            TensorData::F64(v) => Ok(v),
            TensorData::F32(_) => Err(TensorFileError::Kind { expected: "f64 tensor", found: "f32 tensor" }),
        }
    }

    fn write_body<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(&[self.data.dtype(), self.dims.len() as u8])?;
        for &d in &self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        match &self.data {
            TensorData::F32(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            TensorData::F64(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    fn read_body(dtype: u8, r: &mut impl Read) -> Result<Self, TensorFileError> {
        let rank = read_u8(r)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(r)? as usize);
        }
        let n: usize = dims.iter().product();
        let data = match dtype {
            DTYPE_F32 => {
                let mut buf = vec![0u8; n * 4];
                r.read_exact(&mut buf)?;
                TensorData::F32(buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
            }
            DTYPE_F64 => {
                let mut buf = vec![0u8; n * 8];
                r.read_exact(&mut buf)?;
                TensorData::F64(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
            }
            other => return Err(TensorFileError::BadDtype(other)),
        };
        Tensor::new(dims, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + 8 * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        self.write_body(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorFileError> {
        let mut cursor = bytes;
        let tag = read_header(&mut cursor)?;
        if tag == BUNDLE_TAG {
            return Err(TensorFileError::Kind { expected: "single tensor", found: "bundle" });
        }
        let t = Tensor::read_body(tag, &mut cursor)?;
        if !cursor.is_empty() {
            return Err(TensorFileError::Trailing);
        }
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TensorFileError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TensorFileError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Ordered collection of named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorBundle {
    entries: Vec<(String, Tensor)>,
}

impl TensorBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        if let Some(slot) = self.entries.iter_mut().find(|(n, _)| *n == name) {
            slot.1 = tensor;
        } else {
            self.entries.push((name, tensor));
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn take(&mut self, name: &str) -> Result<Tensor, TensorFileError> {
        let pos = self
            .entries
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| TensorFileError::Missing(name.to_string()))?;
        Ok(self.entries.remove(pos).1)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, TensorFileError> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(BUNDLE_TAG);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            if name.len() > u16::MAX as usize {
                return Err(TensorFileError::BadName(name.clone()));
            }
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            t.write_body(&mut out)?;
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorFileError> {
        let mut cursor = bytes;
        let tag = read_header(&mut cursor)?;
        if tag != BUNDLE_TAG {
            return Err(TensorFileError::Kind { expected: "bundle", found: "single tensor" });
        }
        let count = read_u32(&mut cursor)? as usize;
        let mut bundle = TensorBundle::new();
        for _ in 0..count {
            let len = read_u16(&mut cursor)? as usize;
            let mut name = vec![0u8; len];
            cursor.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| TensorFileError::BadName(e.to_string()))?;
            let dtype = read_u8(&mut cursor)?;
            let t = Tensor::read_body(dtype, &mut cursor)?;
            bundle.entries.push((name, t));
        }
        if !cursor.is_empty() {
            return Err(TensorFileError::Trailing);
        }
        Ok(bundle)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TensorFileError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TensorFileError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn read_header(r: &mut impl Read) -> Result<u8, TensorFileError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(TensorFileError::BadMagic(magic));
    }
    let version = read_u8(r)?;
    if version != VERSION {
        return Err(TensorFileError::BadVersion(version));
    }
    Ok(read_u8(r)?)
}

fn read_u8(r: &mut impl Read) -> io::Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u16(r: &mut impl Read) -> io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let t = Tensor::f32(vec![3, 2, 1], vec![0.0, 1.0, 0.5, 0.25, 1.0, 0.0]).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(&bytes[..4], b"AERO");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 0);
        assert_eq!(bytes[6], 3);
        assert_eq!(&bytes[7..19], &[3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[19..23], &0.0f32.to_le_bytes());
        assert_eq!(&bytes[23..27], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 7 + 12 + 24);
    }

    #[test]
    fn rejects_corrupt_headers() {
        let mut bytes = Tensor::f32(vec![2], vec![1.0, 2.0]).unwrap().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(Tensor::from_bytes(&bytes), Err(TensorFileError::BadMagic(_))));
        let mut bytes = Tensor::f32(vec![2], vec![1.0, 2.0]).unwrap().to_bytes();
        bytes[4] = 9;
        assert!(matches!(Tensor::from_bytes(&bytes), Err(TensorFileError::BadVersion(9))));
        let mut bytes = Tensor::f32(vec![2], vec![1.0, 2.0]).unwrap().to_bytes();
        bytes[5] = 7;
        assert!(matches!(Tensor::from_bytes(&bytes), Err(TensorFileError::BadDtype(7))));
        let bytes = Tensor::f32(vec![2], vec![1.0, 2.0]).unwrap().to_bytes();
        assert!(matches!(Tensor::from_bytes(&bytes[..bytes.len() - 1]), Err(TensorFileError::Io(_))));
        assert!(Tensor::f32(vec![2, 2], vec![1.0]).is_err());
    }

    #[test]
    fn bundle_keeps_names_and_order() {
        let mut b = TensorBundle::new();
        b.insert("w", Tensor::f64(vec![2, 2], vec![1.0, -2.0, 3.5, 1e-300]).unwrap());
        b.insert("bias", Tensor::f64(vec![2], vec![0.0, f64::MIN_POSITIVE]).unwrap());
        let bytes = b.to_bytes().unwrap();
        assert_eq!(bytes[5], BUNDLE_TAG);
        let back = TensorBundle::from_bytes(&bytes).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.names().collect::<Vec<_>>(), vec!["w", "bias"]);
        assert!(Tensor::from_bytes(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn single_tensor_roundtrip(dims in proptest::collection::vec(1usize..5, 0..4), seed in any::<u32>()) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n).map(|i| (i as f32 + seed as f32).sin()).collect();
            let t = Tensor::f32(dims, data).unwrap();
            prop_assert_eq!(Tensor::from_bytes(&t.to_bytes()).unwrap(), t);
        }
    }
}
