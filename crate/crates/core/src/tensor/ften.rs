//! `FTEN` tensor fixture files.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! 0..4    magic "FTEN"
//! 4..8    version = 1
//! 8..12   ndim
//! 12..    ndim dims, then product(dims) f32 values, row-major
//! ```

use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FTEN";
pub const VERSION: u32 = 1;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * t.ndim() + t.size_bytes());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes an `FTEN` buffer. `origin` names the source in error messages.
pub fn decode(bytes: &[u8], origin: &Path) -> Result<Tensor> {
    let err = |offset: usize, detail: String| Error::Format {
        path: origin.to_path_buf(),
        offset: offset as u64,
        detail,
    };
    let read_u32 = |offset: usize| -> Result<u32> {
        bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| err(offset, "unexpected end of file".into()))
    };

    if bytes.get(0..4) != Some(MAGIC.as_slice()) {
        return Err(err(0, "missing FTEN magic".into()));
    }
    let version = read_u32(4)?;
    if version != VERSION {
        return Err(err(4, format!("unsupported version {version}")));
    }
    let ndim = read_u32(8)? as usize;
    if ndim == 0 {
        return Err(err(8, "ndim must be at least 1".into()));
    }
    let mut shape = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let offset = 12 + 4 * i;
        let d = read_u32(offset)? as usize;
        if d == 0 {
            return Err(err(offset, format!("dimension {i} is zero")));
        }
        shape.push(d);
    }
    let header = 12 + 4 * ndim;
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| err(12, "element count overflows".into()))?;
    let expected = header + 4 * count;
    if bytes.len() != expected {
        return Err(err(
            bytes.len().min(expected),
            format!("expected {expected} bytes for shape {shape:?}, found {}", bytes.len()),
        ));
    }
    let data = bytes[header..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Tensor::new(&shape, data)
}

pub fn write(path: &Path, t: &Tensor) -> Result<()> {
    std::fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(&[1, 2], vec![1.0, -2.5]).unwrap();
        let bytes = encode(&t);
        assert_eq!(&bytes[0..4], b"FTEN");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &2u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 28);
    }

    #[test]
    fn truncated_file_reports_offset() {
        let t = Tensor::zeros(&[3]);
        let mut bytes = encode(&t);
        bytes.truncate(18);
        match decode(&bytes, Path::new("x.ften")) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 18),
            other => panic!("unexpected {other:?}"),
        }
        match decode(b"NOPE", Path::new("y.ften")) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn round_trip(shape in prop::collection::vec(1usize..5, 1..4), seed in any::<u32>()) {
            let t = Tensor::from_fn(&shape, |i| (i as f32 * 0.37 + seed as f32).sin());
            let back = decode(&encode(&t), Path::new("mem")).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
