//! Binary checkpoint container shared by every model component.
//!
//! Layout (all integers little-endian):
//! `b"SODASR\0\x01"`, `u32` tensor count, then per tensor a `u16` name length,
//! the UTF-8 name, a `u8` rank, `rank` × `u32` dims and the `f32` payload.

use std::fs;
use std::path::Path;

use super::{Float, ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SODASR\0\x01";

pub fn encode<T: Float>(params: &ParamStore<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        let bytes = name.as_bytes();
        if bytes.len() > u16::MAX as usize || t.rank() > u8::MAX as usize {
            return Err(Error::Checkpoint(format!("cannot encode tensor '{}'", name)));
        }
        out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(bytes);
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated: need {} bytes at offset {}, file has {}",
                n,
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode<T: Float>(bytes: &[u8]) -> Result<ParamStore<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).map_err(|_| Error::Checkpoint("bad magic".into()))? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let payload = r.take(n.checked_mul(4).ok_or_else(|| {
            Error::Checkpoint(format!("tensor '{}' is too large", name))
        })?)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        store.insert(name, Tensor::new(&shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after {} tensors",
            bytes.len() - r.pos,
            count
        )));
    }
    Ok(store)
}

pub fn save<T: Float>(params: &ParamStore<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(params)?)?;
    Ok(())
}

pub fn load<T: Float>(path: impl AsRef<Path>) -> Result<ParamStore<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| {
        Error::Checkpoint(format!("cannot read checkpoint {}: {}", path.display(), e))
    })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.insert("student.head.w", Tensor::from_fn(&[3, 3, 3, 4], |i| i as f32 * 0.5));
        s.insert("wat.ln1.g", Tensor::ones(&[4]));
        s.insert("scalar", Tensor::scalar(-2.25));
        s
    }

    #[test]
    fn layout_is_bit_exact() {
        let mut s = ParamStore::<f32>::new();
        s.insert("ab", Tensor::from_vec(&[2], vec![1.0, -0.5]));
        let bytes = encode(&s).unwrap();
        let mut expected = b"SODASR\0\x01".to_vec();
        expected.extend([1, 0, 0, 0]);
        expected.extend([2, 0]);
        expected.extend(b"ab");
        expected.push(1);
        expected.extend([2, 0, 0, 0]);
        expected.extend(1.0f32.to_le_bytes());
        expected.extend((-0.5f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn round_trip() {
        let s = sample();
        assert_eq!(decode::<f32>(&encode(&s).unwrap()).unwrap(), s);
    }

    #[test]
    fn rejects_bad_magic_truncation_and_trailing_bytes() {
        let bytes = encode(&sample()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode::<f32>(&bad).is_err());
        assert!(decode::<f32>(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode::<f32>(&long).is_err());
        assert!(decode::<f32>(&bytes[..4]).is_err());
    }
}
