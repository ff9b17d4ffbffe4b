//! Binary weight checkpoints.
//!
//! Layout, all integers little-endian: the magic bytes `TPLN`, a `u16` format
//! version, a `u32` entry count, then per entry a `u32` name length, the UTF-8
//! name, a `u32` rank, `rank` extents as `u32`, and the raw `f32` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"TPLN";
pub const VERSION: u16 = 1;

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} {v} does not fit in u32")))
}

/// Serializes named tensors into `w`.
pub fn write_to<W: Write>(mut w: W, entries: &[(&str, &Tensor<f32>)]) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&to_u32(entries.len(), "entry count")?.to_le_bytes())?;
    for (name, t) in entries {
        w.write_all(&to_u32(name.len(), "name length")?.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&to_u32(t.shape().len(), "rank")?.to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&to_u32(d, "extent")?.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Checkpoint("file is truncated".into())
    } else {
        Error::Io(e)
    }
}

/// Parses a checkpoint stream. Trailing bytes after the last entry are rejected.
pub fn read_from<R: Read>(mut r: R) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let mut ver = [0u8; 2];
    r.read_exact(&mut ver).map_err(truncated)?;
    let ver = u16::from_le_bytes(ver);
    if ver != VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {ver}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u32(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = crate::tensor::element_count(&shape)
            .ok_or_else(|| Error::Checkpoint(format!("entry `{name}` has an overflowing shape {shape:?}")))?;
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes).map_err(truncated)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("entry `{name}`: {e}")))?;
        out.push((name, t));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("unexpected bytes after the last entry".into()));
    }
    Ok(out)
}

pub fn save(path: &Path, entries: &[(&str, &Tensor<f32>)]) -> Result<()> {
    write_to(BufWriter::new(File::create(path)?), entries)
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    read_from(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_from(&b"XXXX\x01\x00\x00\x00\x00\x00"[..]).is_err());
        let t = Tensor::new(vec![2], vec![1.0f32, 2.0]).unwrap();
        let mut buf = Vec::new();
        write_to(&mut buf, &[("a", &t)]).unwrap();
        assert!(read_from(&buf[..buf.len() - 1]).is_err());
        buf.push(0);
        assert!(read_from(&buf[..]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            bits in proptest::collection::vec(any::<u32>(), 1..64),
            name in "[a-z0-9._]{0,24}",
        ) {
            let data: Vec<f32> = bits.iter().map(|&b| f32::from_bits(b)).collect();
            let t = Tensor::new(vec![data.len()], data).unwrap();
            let mut buf = Vec::new();
            write_to(&mut buf, &[(name.as_str(), &t)]).unwrap();
            let back = read_from(&buf[..]).unwrap();
            prop_assert_eq!(back.len(), 1);
            prop_assert_eq!(&back[0].0, &name);
            let got: Vec<u32> = back[0].1.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(got, bits);
        }
    }
}
