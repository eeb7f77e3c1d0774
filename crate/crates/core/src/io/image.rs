//! Binary 8-bit netpbm images: PGM (P5) for one channel, PPM (P6) for three.
//! Pixels map to `[0, 1]` by `v / maxval` on load and `round(v · 255)`,
//! clamped, on save.

use crate::error::{Error, Result};
use crate::{Scalar, Tensor};

fn parse_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        msg: msg.into(),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    /// Returns the value and its offset.
    fn number(&mut self, what: &str) -> Result<(usize, usize)> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_err(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map(|v| (v, start))
            .map_err(|_| parse_err(start, format!("{what} out of range")))
    }
}

/// Decodes a P5 or P6 file into a `C×H×W` tensor.
pub fn decode_netpbm(bytes: &[u8]) -> Result<Tensor<f64>> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(parse_err(0, "expected a binary PGM (P5) or PPM (P6) magic number")),
    };
    let mut h = Header { bytes, pos: 2 };
    let (width, _) = h.number("width")?;
    let (height, _) = h.number("height")?;
    let (maxval, at) = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(parse_err(2, format!("empty image {width}×{height}")));
    }
    if !(1..=255).contains(&maxval) {
        return Err(parse_err(at, format!("maxval {maxval} is not an 8-bit value")));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(parse_err(h.pos, "expected a single whitespace before the raster")),
    }
    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| parse_err(2, "image dimensions overflow"))?;
    let raster = &bytes[h.pos..];
    if raster.len() < count {
        return Err(parse_err(
            bytes.len(),
            format!("truncated raster: expected {count} bytes, found {}", raster.len()),
        ));
    }
    if raster.len() > count {
        return Err(parse_err(h.pos + count, "trailing bytes after raster"));
    }
    let scale = maxval as f64;
    let plane = width * height;
    Ok(Tensor::from_fn(&[channels, height, width], |i| {
        let (c, p) = (i / plane, i % plane);
        raster[p * channels + c] as f64 / scale
    }))
}

pub fn quantize<T: Scalar>(v: T) -> u8 {
    let x = (v.to_f64_lossless() * 255.0).round();
    if x.is_nan() {
        0
    } else {
        x.clamp(0.0, 255.0) as u8
    }
}

/// Encodes a 1-channel tensor as P5 or a 3-channel tensor as P6.
pub fn encode_netpbm<T: Scalar>(t: &Tensor<T>) -> Result<Vec<u8>> {
    let (c, h, w) = t.dims3()?;
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => {
            return Err(Error::InvalidShape {
                op: "encode_netpbm",
                msg: format!("images need 1 or 3 channels, got {c}"),
            })
        }
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    out.reserve(c * plane);
    for p in 0..plane {
        for ch in 0..c {
            out.push(quantize(t.data()[ch * plane + p]));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_with_comments() {
        let mut b = b"P5 # gray\n2 # w\n2\n255\n".to_vec();
        b.extend_from_slice(&[0, 255, 51, 102]);
        let t = decode_netpbm(&b).unwrap();
        assert_eq!(t.shape(), &[1, 2, 2]);
        assert_eq!(t.data(), &[0.0, 1.0, 0.2, 0.4]);
    }

    #[test]
    fn rgb_is_planar() {
        let mut b = b"P6\n2 1\n255\n".to_vec();
        b.extend_from_slice(&[255, 0, 0, 0, 0, 255]);
        let t = decode_netpbm(&b).unwrap();
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(encode_netpbm(&t).unwrap(), b);
    }

    #[test]
    fn quantizes_and_clamps() {
        let t = Tensor::<f64>::new(vec![1, 1, 4], vec![-0.5, 0.5, 1.7, f64::NAN]).unwrap();
        let b = encode_netpbm(&t).unwrap();
        assert_eq!(&b[b.len() - 4..], &[0, 128, 255, 0]);
    }

    #[test]
    fn malformed_headers() {
        let offset = |b: &[u8]| match decode_netpbm(b) {
            Err(Error::Parse { offset, .. }) => offset,
            other => panic!("{other:?}"),
        };
        assert_eq!(offset(b"P3\n1 1\n255\n"), 0);
        assert_eq!(offset(b"P5\n1 x\n255\n"), 5);
        assert_eq!(offset(b"P5\n1 1\n65535\n\0\0"), 7);
        assert_eq!(offset(b"P5\n2 2\n255\n\0"), 12);
        assert_eq!(offset(b"P5\n1 1\n255\n\0\0"), 12);
        assert!(encode_netpbm(&Tensor::<f64>::zeros(&[2, 2, 2])).is_err());
    }
}
