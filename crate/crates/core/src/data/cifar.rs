//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! 3072 channel-major pixels of a 3×32×32 image.

use std::path::Path;

use super::{LabeledDataset, Labels, Split};
use crate::error::{Error, Result};

pub const RECORD: usize = 3073;
const PIXELS: usize = 3072;
const FORMAT: &str = "CIFAR-10";

pub fn parse_cifar10(bytes: &[u8]) -> Result<(Vec<u8>, Vec<usize>)> {
    if bytes.is_empty() {
        return Err(Error::Header {
            format: FORMAT,
            msg: "empty batch".into(),
        });
    }
    if !bytes.len().is_multiple_of(RECORD) {
        return Err(Error::Truncated {
            format: FORMAT,
            needed: bytes.len().div_ceil(RECORD) as u64 * RECORD as u64,
            available: bytes.len() as u64,
        });
    }
    let n = bytes.len() / RECORD;
    let mut images = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(Error::Header {
                format: FORMAT,
                msg: format!("record {i} has label {}", rec[0]),
            });
        }
        labels.push(rec[0] as usize);
        images.extend_from_slice(&rec[1..]);
    }
    Ok((images, labels))
}

/// Concatenates one or more batch files.
pub fn load_cifar10_bin<P: AsRef<Path>>(paths: &[P]) -> Result<LabeledDataset> {
    if paths.is_empty() {
        return Err(Error::invalid("no CIFAR-10 batch files given"));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let (i, l) = parse_cifar10(&std::fs::read(p)?)?;
        images.extend(i);
        labels.extend(l);
    }
    LabeledDataset::new([3, 32, 32], images, Labels::Single(labels), Split::default())
}

pub fn encode_cifar10(data: &LabeledDataset) -> Result<Vec<u8>> {
    if data.shape != [3, 32, 32] {
        return Err(Error::invalid(format!("CIFAR-10 records hold 3x32x32 images, got {:?}", data.shape)));
    }
    let labels = data.single_labels()?;
    let mut out = Vec::with_capacity(data.len() * RECORD);
    for (i, &l) in labels.iter().enumerate() {
        if l > 9 {
            return Err(Error::invalid(format!("label {l} does not fit CIFAR-10")));
        }
        out.push(l as u8);
        out.extend_from_slice(data.image(i));
    }
    Ok(out)
}

pub fn write_cifar10(data: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_cifar10(data)?)?;
    Ok(())
}
