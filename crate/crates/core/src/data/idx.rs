//! IDX files: big-endian magic `0x0000 08 NN` (unsigned bytes, `NN`
//! dimensions), `NN` big-endian u32 extents, then the payload.

use std::path::Path;

use super::{LabeledDataset, Labels, Split};
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
/// Multi-hot label matrix `[N, classes]`.
pub const MULTI_LABELS_MAGIC: u32 = 0x0000_0802;
const FORMAT: &str = "IDX";

struct Idx<'a> {
    magic: u32,
    dims: Vec<usize>,
    payload: &'a [u8],
}

fn parse<'a>(bytes: &'a [u8], allowed: &[u32]) -> Result<Idx<'a>> {
    let truncated = |needed: u64| Error::Truncated {
        format: FORMAT,
        needed,
        available: bytes.len() as u64,
    };
    if bytes.len() < 4 {
        return Err(truncated(4));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    if !allowed.contains(&magic) {
        return Err(Error::BadMagic { format: FORMAT, found: magic });
    }
    let ndim = (magic & 0xff) as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(truncated(header as u64));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let size = dims
        .iter()
        .try_fold(1u64, |a, &d| a.checked_mul(d as u64))
        .ok_or_else(|| Error::Header {
            format: FORMAT,
            msg: format!("dimensions {dims:?} overflow"),
        })?;
    if dims[1..].contains(&0) {
        return Err(Error::Header {
            format: FORMAT,
            msg: format!("zero extent in {dims:?}"),
        });
    }
    let needed = header as u64 + size;
    if (bytes.len() as u64) < needed {
        return Err(truncated(needed));
    }
    if bytes.len() as u64 > needed {
        return Err(Error::Header {
            format: FORMAT,
            msg: format!("{} trailing bytes", bytes.len() as u64 - needed),
        });
    }
    Ok(Idx {
        magic,
        dims,
        payload: &bytes[header..],
    })
}

/// Parses an image file into `(count, [1, H, W], pixels)`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, [usize; 3], Vec<u8>)> {
    let idx = parse(bytes, &[IMAGES_MAGIC])?;
    Ok((idx.dims[0], [1, idx.dims[1], idx.dims[2]], idx.payload.to_vec()))
}

/// Parses a label file, single-class or multi-hot.
pub fn parse_labels(bytes: &[u8]) -> Result<Labels> {
    let idx = parse(bytes, &[LABELS_MAGIC, MULTI_LABELS_MAGIC])?;
    if idx.magic == LABELS_MAGIC {
        return Ok(Labels::Single(idx.payload.iter().map(|&b| b as usize).collect()));
    }
    let classes = idx.dims[1];
    let mut sets = Vec::with_capacity(idx.dims[0]);
    for row in idx.payload.chunks_exact(classes) {
        if row.iter().any(|&b| b > 1) {
            return Err(Error::Header {
                format: FORMAT,
                msg: "multi-hot entries must be 0 or 1".into(),
            });
        }
        sets.push((0..classes).filter(|&c| row[c] == 1).collect());
    }
    Ok(Labels::Multi(sets))
}

pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledDataset> {
    let (n, shape, pixels) = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if labels.len() != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    LabeledDataset::new(shape, pixels, labels, Split::default())
}

pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<LabeledDataset> {
    parse_idx(&std::fs::read(images)?, &std::fs::read(labels)?)
}

fn header(magic: u32, dims: &[usize]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out
}

/// Encodes single-channel images and their labels. Multilabel sets are
/// written multi-hot over `max class + 1` columns (at least 10).
pub fn encode_idx(data: &LabeledDataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let [c, h, w] = data.shape;
    if c != 1 {
        return Err(Error::invalid(format!("IDX images are single-channel, got {c} channels")));
    }
    let mut images = header(IMAGES_MAGIC, &[data.len(), h, w]);
    images.extend_from_slice(&data.images);
    let labels = match &data.labels {
        Labels::Single(v) => {
            if v.iter().any(|&l| l > 255) {
                return Err(Error::invalid("labels above 255 do not fit IDX bytes"));
            }
            let mut out = header(LABELS_MAGIC, &[v.len()]);
            out.extend(v.iter().map(|&l| l as u8));
            out
        }
        Labels::Multi(sets) => {
            let classes = sets.iter().flatten().map(|&c| c + 1).max().unwrap_or(0).max(10);
            let mut out = header(MULTI_LABELS_MAGIC, &[sets.len(), classes]);
            for set in sets {
                let mut row = vec![0u8; classes];
                for &c in set {
                    row[c] = 1;
                }
                out.extend_from_slice(&row);
            }
            out
        }
    };
    Ok((images, labels))
}

pub fn write_idx(data: &LabeledDataset, images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
    let (i, l) = encode_idx(data)?;
    std::fs::write(images, i)?;
    std::fs::write(labels, l)?;
    Ok(())
}
