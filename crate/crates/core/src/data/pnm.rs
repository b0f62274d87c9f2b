//! Binary PGM (P5) and PPM (P6) with maxval 255.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const FORMAT: &str = "PNM";

/// `[H, W]` becomes P5, `[3, H, W]` becomes P6. Values must lie in [0, 1].
pub fn encode_pnm(image: &Tensor) -> Result<Vec<u8>> {
    let (magic, h, w) = match *image.shape() {
        [h, w] | [1, h, w] => ("P5", h, w),
        [3, h, w] => ("P6", h, w),
        ref s => return Err(Error::shape(format!("cannot write {s:?} as PGM/PPM"))),
    };
    if let Some(v) = image.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
    }
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let q = |v: f32| (v * 255.0).round() as u8;
    if magic == "P5" {
        out.extend(image.data().iter().map(|&v| q(v)));
    } else {
        let plane = h * w;
        for p in 0..plane {
            for c in 0..3 {
                out.push(q(image.data()[c * plane + p]));
            }
        }
    }
    Ok(out)
}

pub fn write_pnm(image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_pnm(image)?)?;
    Ok(())
}

/// Decodes P5/P6 into `(channels, height, width, bytes)`, with P6 pixels
/// de-interleaved to channel-major order.
pub fn parse_pnm(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bad = |msg: &str| Error::Header {
        format: FORMAT,
        msg: msg.into(),
    };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        Some(m) => {
            return Err(Error::BadMagic {
                format: FORMAT,
                found: u16::from_be_bytes([m[0], m[1]]) as u32,
            })
        }
        None => {
            return Err(Error::Truncated {
                format: FORMAT,
                needed: 2,
                available: bytes.len() as u64,
            })
        }
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("malformed header field"))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 || w == 0 || h == 0 {
        return Err(bad("only non-empty 8-bit images are supported"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing separator before pixel data"));
    }
    let payload = &bytes[pos + 1..];
    let n = channels * h * w;
    if payload.len() != n {
        return Err(Error::Truncated {
            format: FORMAT,
            needed: (pos + 1 + n) as u64,
            available: bytes.len() as u64,
        });
    }
    let mut out = vec![0u8; n];
    for p in 0..h * w {
        for c in 0..channels {
            out[c * h * w + p] = payload[p * channels + c];
        }
    }
    Ok((channels, h, w, out))
}
