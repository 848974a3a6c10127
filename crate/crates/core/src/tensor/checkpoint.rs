//! Binary checkpoint format: `SGN1`, u32 parameter count, then for each
//! parameter in name order: u16 name length, UTF-8 name, u8 rank, u32 dims,
//! raw f32 values. All integers and floats are little-endian.

use std::path::Path;

use super::{ParamSet, Tensor};
use crate::error::CheckpointError;

const MAGIC: &[u8; 4] = b"SGN1";

/// Pack f64 settings into an f32 tensor bit-exactly: each value becomes
/// two f32 bit patterns (high word first).
pub fn meta_tensor(values: &[f64]) -> Tensor<f32> {
    let data = values
        .iter()
        .flat_map(|v| {
            let bits = v.to_bits();
            [f32::from_bits((bits >> 32) as u32), f32::from_bits(bits as u32)]
        })
        .collect();
    Tensor::new(&[2 * values.len()], data).expect("meta needs at least one value")
}

/// Inverse of [`meta_tensor`].
pub fn meta_values(t: &Tensor<f32>) -> Vec<f64> {
    t.data()
        .chunks_exact(2)
        .map(|p| f64::from_bits(((p[0].to_bits() as u64) << 32) | p[1].to_bits() as u64))
        .collect()
}

pub fn encode_checkpoint(params: &ParamSet<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + params.numel() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        let name = p.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(p.value.rank() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Corrupt {
                path: self.path.to_path_buf(),
                reason: format!("unexpected end of data at byte {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn corrupt(&self, reason: impl Into<String>) -> CheckpointError {
        CheckpointError::Corrupt {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }
}

/// Decode a checkpoint; `origin` only labels errors.
pub fn decode_checkpoint(bytes: &[u8], origin: &Path) -> Result<ParamSet<f32>, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic {
            path: origin.to_path_buf(),
        });
    }
    let mut r = Reader {
        buf: bytes,
        pos: 4,
        path: origin,
    };
    let count = r.u32()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| r.corrupt("parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let value = Tensor::new(&shape, data).map_err(|e| r.corrupt(e.to_string()))?;
        params
            .insert(&name, value)
            .map_err(|e| r.corrupt(e.to_string()))?;
    }
    if r.pos != bytes.len() {
        return Err(r.corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ParamSet<f32>, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, encode_checkpoint(params)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSet<f32>, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn meta_survives_the_file_format(bits in proptest::collection::vec(any::<u64>(), 1..6)) {
            let values: Vec<f64> = bits.iter().map(|&b| f64::from_bits(b)).collect();
            let mut ps = ParamSet::new();
            ps.insert("__meta.x", meta_tensor(&values)).unwrap();
            let back = decode_checkpoint(&encode_checkpoint(&ps), Path::new("m")).unwrap();
            let got: Vec<u64> = meta_values(back.value("__meta.x").unwrap()).iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(got, bits);
        }
    }

    #[test]
    fn header_layout() {
        let mut ps = ParamSet::new();
        ps.insert("b", Tensor::new(&[2], vec![1.0, -2.0]).unwrap()).unwrap();
        ps.insert("a", Tensor::new(&[1, 1], vec![0.5]).unwrap()).unwrap();
        let bytes = encode_checkpoint(&ps);
        assert_eq!(&bytes[..4], b"SGN1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        // first entry is "a" (lexicographic)
        assert_eq!(u16::from_le_bytes(bytes[8..10].try_into().unwrap()), 1);
        assert_eq!(bytes[10], b'a');
        assert_eq!(bytes[11], 2);
        assert_eq!(&bytes[20..24], &0.5f32.to_le_bytes());
    }

    #[test]
    fn bad_magic_and_truncation() {
        let p = Path::new("x.ckpt");
        assert!(matches!(
            decode_checkpoint(b"NOPE\0\0\0\0", p),
            Err(CheckpointError::BadMagic { .. })
        ));
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        let bytes = encode_checkpoint(&ps);
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 1], p),
            Err(CheckpointError::Corrupt { .. })
        ));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            entries in prop::collection::btree_map("[a-z][a-z0-9_.]{0,12}",
                prop::collection::vec(any::<u32>(), 1..20), 0..6)
        ) {
            let mut ps = ParamSet::new();
            for (name, bits) in &entries {
                let data: Vec<f32> = bits.iter().map(|&b| f32::from_bits(b)).collect();
                ps.insert(name, Tensor::new(&[data.len()], data).unwrap()).unwrap();
            }
            let bytes = encode_checkpoint(&ps);
            let back = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(encode_checkpoint(&back), bytes);
            for (a, b) in ps.iter().zip(back.iter()) {
                prop_assert_eq!(&a.name, &b.name);
                let ab: Vec<u32> = a.value.data().iter().map(|v| v.to_bits()).collect();
                let bb: Vec<u32> = b.value.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(ab, bb);
            }
        }
    }
}
