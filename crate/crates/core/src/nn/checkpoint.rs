//! Named-parameter checkpoint files.
//!
//! Little-endian layout: magic `ZFCK`, `u32` version, `u32` entry count,
//! then per entry `u32` name length, UTF-8 name bytes, `u32` rank, `u64`
//! dims, and `f64` values.

use std::path::Path;

use super::tensor::Tensor;
use crate::scene::io::{read_file, write_file, Reader};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ZFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint<'a>(entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let entries: Vec<_> = entries.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader::new(path, bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version}"),
        ));
    }
    let count = r.u32()?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(path, "parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        out.push((name, Tensor::new(shape, data)?));
    }
    r.finish()?;
    Ok(out)
}

pub fn save_checkpoint<'a>(
    path: &Path,
    entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<()> {
    write_file(path, &encode_checkpoint(entries))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    decode_checkpoint(path, &read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            values in prop::collection::vec(any::<f64>(), 0..40),
            name in "[a-z_.0-9]{0,12}",
        ) {
            let t = Tensor::vector(values);
            let bytes = encode_checkpoint([(name.as_str(), &t)]);
            let back = decode_checkpoint(Path::new("mem"), &bytes).unwrap();
            prop_assert_eq!(back.len(), 1);
            prop_assert_eq!(&back[0].0, &name);
            let same_bits = back[0].1.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same_bits);
            prop_assert_eq!(encode_checkpoint([(back[0].0.as_str(), &back[0].1)]), bytes);
        }
    }

    #[test]
    fn multi_dim_entries() {
        let a = Tensor::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap();
        let b = Tensor::new(vec![1, 2, 2, 1], vec![1.5, -0.0, f64::MIN_POSITIVE, 3.0]).unwrap();
        let bytes = encode_checkpoint([("a", &a), ("layer.b", &b)]);
        assert_eq!(&bytes[..4], b"ZFCK");
        let back = decode_checkpoint(Path::new("mem"), &bytes).unwrap();
        assert_eq!(back, vec![("a".to_string(), a), ("layer.b".to_string(), b)]);
        assert!(decode_checkpoint(Path::new("mem"), &bytes[..bytes.len() - 3]).is_err());
    }
}
