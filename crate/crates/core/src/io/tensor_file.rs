//! `SPAT` tensor files.
//!
//! ```text
//! offset  size      field
//! 0       4         magic "SPAT"
//! 4       1         version (1)
//! 5       1         dtype (0 = f64, 1 = f32)
//! 6       1         rank r
//! 7       4r        extents, u32 little-endian
//! 7+4r    n·size    row-major payload, little-endian
//! ```

use crate::error::{Error, Result};
use crate::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"SPAT";
pub const VERSION: u8 = 1;

/// A decoded tensor in whichever precision the file stored.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F64(Tensor<f64>),
    F32(Tensor<f32>),
}

impl AnyTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F64(t) => t.shape(),
            AnyTensor::F32(t) => t.shape(),
        }
    }

    /// Converts to `T`; exact when the stored precision is `T`.
    pub fn into_tensor<T: Scalar>(self) -> Tensor<T> {
        match self {
            AnyTensor::F64(t) => t.cast(),
            AnyTensor::F32(t) => t.cast(),
        }
    }
}

pub fn encode_tensor<T: Scalar>(t: &Tensor<T>, out: &mut Vec<u8>) -> Result<()> {
    if t.rank() > u8::MAX as usize {
        return Err(Error::Invalid(format!("rank {} does not fit the tensor format", t.rank())));
    }
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(T::DTYPE);
    out.push(t.rank() as u8);
    for &e in t.shape() {
        let e = u32::try_from(e).map_err(|_| Error::Invalid(format!("extent {e} exceeds u32")))?;
        out.extend_from_slice(&e.to_le_bytes());
    }
    out.reserve(t.len() * T::BYTES);
    for &v in t.data() {
        v.write_le(out);
    }
    Ok(())
}

pub fn tensor_to_bytes<T: Scalar>(t: &Tensor<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    encode_tensor(t, &mut out)?;
    Ok(out)
}

/// Cursor over a byte buffer that reports absolute offsets in errors.
pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8], pos: usize) -> Self {
        Reader { bytes, pos }
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let available = self.bytes.len().saturating_sub(self.pos);
        if available < n {
            return Err(Error::Parse {
                offset: self.bytes.len(),
                msg: format!("truncated {what}: need {n} bytes at offset {}, {available} left", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn parse_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        msg: msg.into(),
    }
}

fn read_payload<T: Scalar>(r: &mut Reader, shape: Vec<usize>, count: usize) -> Result<Tensor<T>> {
    let bytes = count
        .checked_mul(T::BYTES)
        .ok_or_else(|| parse_err(r.pos, "payload size overflows"))?;
    let raw = r.take(bytes, "payload")?;
    let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
    Tensor::new(shape, data)
}

pub(crate) fn read_tensor(r: &mut Reader) -> Result<AnyTensor> {
    let start = r.pos;
    if r.take(4, "magic")? != MAGIC {
        return Err(parse_err(start, "bad magic, expected \"SPAT\""));
    }
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(parse_err(start + 4, format!("unsupported version {version}")));
    }
    let dtype = r.u8("dtype")?;
    if dtype > 1 {
        return Err(parse_err(start + 5, format!("unknown dtype code {dtype}")));
    }
    let rank = r.u8("rank")? as usize;
    if rank == 0 {
        return Err(parse_err(start + 6, "rank must be at least 1"));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut count = 1usize;
    for axis in 0..rank {
        let at = r.pos;
        let e = r.u32("extent")? as usize;
        if e == 0 {
            return Err(parse_err(at, format!("extent {axis} is zero")));
        }
        count = count
            .checked_mul(e)
            .ok_or_else(|| parse_err(at, "element count overflows"))?;
        shape.push(e);
    }
    Ok(if dtype == 0 {
        AnyTensor::F64(read_payload(r, shape, count)?)
    } else {
        AnyTensor::F32(read_payload(r, shape, count)?)
    })
}

/// Decodes a whole file; trailing bytes are an error.
pub fn tensor_from_bytes(bytes: &[u8]) -> Result<AnyTensor> {
    let mut r = Reader::new(bytes, 0);
    let t = read_tensor(&mut r)?;
    if r.pos != bytes.len() {
        return Err(parse_err(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::from_fn(&[2, 3], |i| i as f32);
        let b = tensor_to_bytes(&t).unwrap();
        assert_eq!(&b[..7], b"SPAT\x01\x01\x02");
        assert_eq!(&b[7..15], &[2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(b.len(), 15 + 6 * 4);
        assert_eq!(&b[19..23], &1f32.to_le_bytes());
    }

    #[test]
    fn roundtrip_both_precisions() {
        let t = Tensor::<f64>::from_fn(&[1, 2, 3], |i| (i as f64).exp() - 3.5);
        assert_eq!(tensor_from_bytes(&tensor_to_bytes(&t).unwrap()).unwrap(), AnyTensor::F64(t.clone()));
        let s: Tensor<f32> = t.cast();
        assert_eq!(tensor_from_bytes(&tensor_to_bytes(&s).unwrap()).unwrap(), AnyTensor::F32(s));
    }

    #[test]
    fn errors_carry_offsets() {
        let t = Tensor::<f64>::zeros(&[2, 2]);
        let good = tensor_to_bytes(&t).unwrap();
        let offset = |b: &[u8]| match tensor_from_bytes(b) {
            Err(Error::Parse { offset, .. }) => offset,
            other => panic!("{other:?}"),
        };
        let mut bad = good.clone();
        bad[0] = b'X';
        assert_eq!(offset(&bad), 0);
        let mut bad = good.clone();
        bad[4] = 9;
        assert_eq!(offset(&bad), 4);
        let mut bad = good.clone();
        bad[5] = 7;
        assert_eq!(offset(&bad), 5);
        let mut bad = good.clone();
        bad[11] = 0;
        assert_eq!(offset(&bad), 11);
        assert_eq!(offset(&good[..20]), 20);
        let mut long = good.clone();
        long.push(0);
        assert_eq!(offset(&long), good.len());
        assert_eq!(offset(&[]), 0);
    }
}
