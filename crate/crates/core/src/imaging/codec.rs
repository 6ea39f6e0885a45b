//! RLT1 tensor files.
//!
//! Layout: the ASCII magic `RLT1`, a little-endian `u32` rank, `rank`
//! little-endian `u32` dimensions, then the row-major `f32` payload, also
//! little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RLT1";

/// A dense row-major `f32` tensor as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl RawTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n = element_count(&dims).ok_or_else(|| Error::invalid("tensor dims overflow"))?;
        if n != data.len() {
            return Err(Error::shape(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(RawTensor { dims, data })
    }
}

fn element_count(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

pub fn encode_rlt1(tensor: &RawTensor) -> Result<Vec<u8>> {
    let rank = u32::try_from(tensor.dims.len()).map_err(|_| Error::invalid("rank too large"))?;
    let mut out = Vec::with_capacity(8 + 4 * tensor.dims.len() + 4 * tensor.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&rank.to_le_bytes());
    for &d in &tensor.dims {
        let d = u32::try_from(d).map_err(|_| Error::invalid(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in &tensor.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Decodes one tensor that must span all of `bytes`.
pub fn decode_rlt1(bytes: &[u8]) -> Result<RawTensor> {
    let (tensor, used) = decode_rlt1_prefix(bytes, 0)?;
    if used != bytes.len() {
        return Err(Error::format(used, "trailing bytes after RLT1 payload"));
    }
    Ok(tensor)
}

/// Decodes one tensor from the front of `bytes` and returns it with the
/// number of bytes consumed. `base` is added to every reported offset.
pub fn decode_rlt1_prefix(bytes: &[u8], base: usize) -> Result<(RawTensor, usize)> {
    let read_u32 = |at: usize, what: &str| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| Error::format(base + at, format!("truncated {what}")))
    };
    match bytes.get(0..4) {
        Some(m) if m == MAGIC => {}
        Some(_) => return Err(Error::format(base, "bad magic, expected `RLT1`")),
        None => return Err(Error::format(base, "truncated magic")),
    }
    let rank = read_u32(4, "rank")? as usize;
    let header = rank
        .checked_mul(4)
        .and_then(|n| n.checked_add(8))
        .ok_or_else(|| Error::format(base + 4, "rank overflow"))?;
    if header > bytes.len() {
        return Err(Error::format(base + bytes.len(), "truncated dimension list"));
    }
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        dims.push(read_u32(8 + 4 * i, "dimension")? as usize);
    }
    let count = element_count(&dims)
        .and_then(|n| n.checked_mul(4).map(|b| (n, b)))
        .ok_or_else(|| Error::format(base + 8, format!("dimensions {dims:?} overflow")))?;
    let (n, payload) = count;
    let end = header
        .checked_add(payload)
        .ok_or_else(|| Error::format(base + 8, "payload size overflow"))?;
    if end > bytes.len() {
        return Err(Error::format(
            base + bytes.len(),
            format!("truncated payload: need {payload} bytes from offset {}", base + header),
        ));
    }
    let data = bytes[header..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect::<Vec<_>>();
    debug_assert_eq!(data.len(), n);
    Ok((RawTensor { dims, data }, end))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<RawTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_rlt1(&bytes)
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &RawTensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_rlt1(tensor)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn golden_transport_file() {
        // 2x2x9 tensor holding 0.5 * k at flat index k, built byte by byte
        let mut bytes = b"RLT1".to_vec();
        bytes.extend_from_slice(&[3, 0, 0, 0]);
        bytes.extend_from_slice(&[2, 0, 0, 0, 2, 0, 0, 0, 9, 0, 0, 0]);
        for k in 0..36u32 {
            // 0.5*k is exact in f32
            bytes.extend_from_slice(&(0.5f32 * k as f32).to_bits().to_le_bytes());
        }
        assert_eq!(&bytes[20..24], &[0, 0, 0, 0]);
        assert_eq!(&bytes[24..28], &[0x00, 0x00, 0x00, 0x3f]); // 0.5f32
        let t = decode_rlt1(&bytes).unwrap();
        assert_eq!(t.dims, vec![2, 2, 9]);
        assert_eq!(t.data[0], 0.0);
        assert_eq!(t.data[1], 0.5);
        assert_eq!(t.data[35], 17.5);
        // pixel (1, 0), coefficient 3 sits at flat index (1*2 + 0)*9 + 3 = 21
        assert_eq!(t.data[21], 10.5);
        assert_eq!(encode_rlt1(&t).unwrap(), bytes);
    }

    #[test]
    fn bad_magic() {
        let err = decode_rlt1(b"XXXX\x00\x00\x00\x00").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");
    }

    #[test]
    fn truncation_reports_offsets() {
        let t = RawTensor::new(vec![2, 3], vec![1.0; 6]).unwrap();
        let bytes = encode_rlt1(&t).unwrap();
        match decode_rlt1(&bytes[..bytes.len() - 1]).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, bytes.len() - 1),
            e => panic!("{e}"),
        }
        assert!(matches!(decode_rlt1(&bytes[..10]).unwrap_err(), Error::Format { .. }));
        assert!(matches!(
            decode_rlt1(b"RLT").unwrap_err(),
            Error::Format { offset: 0, .. }
        ));
    }

    #[test]
    fn dimension_overflow() {
        let mut bytes = b"RLT1".to_vec();
        bytes.extend_from_slice(&3u32.to_le_bytes());
        for _ in 0..3 {
            bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(
            decode_rlt1(&bytes).unwrap_err(),
            Error::Format { offset: 8, .. } | Error::Format { .. }
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let t = RawTensor::new(vec![1], vec![2.0]).unwrap();
        let mut bytes = encode_rlt1(&t).unwrap();
        bytes.push(0);
        assert!(decode_rlt1(&bytes).is_err());
        let (_, used) = decode_rlt1_prefix(&bytes, 0).unwrap();
        assert_eq!(used, bytes.len() - 1);
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            dims in proptest::collection::vec(1usize..5, 0..4),
            seed in any::<u64>(),
        ) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n)
                .map(|i| {
                    let bits = (seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) >> 11) as u32;
                    let v = f32::from_bits(bits);
                    if v.is_finite() { v } else { -(i as f32) }
                })
                .collect();
            let t = RawTensor::new(dims, data).unwrap();
            let back = decode_rlt1(&encode_rlt1(&t).unwrap()).unwrap();
            prop_assert_eq!(back.dims, t.dims);
            prop_assert!(back.data.iter().zip(&t.data).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
