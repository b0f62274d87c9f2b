//! Datasets, preprocessing, synthetic M2NIST, image transforms and PNM output.

pub mod cifar;
pub mod idx;
pub mod m2nist;
pub mod pnm;
pub mod transform;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    #[default]
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Labels {
    Single(Vec<usize>),
    /// Sorted, de-duplicated class sets.
    Multi(Vec<Vec<usize>>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Single(v) => v.len(),
            Labels::Multi(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `u8` images of one shape plus their labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDataset {
    pub shape: [usize; 3],
    /// All images back to back, each `C×H×W` row-major.
    pub images: Vec<u8>,
    pub labels: Labels,
    pub split: Split,
}

impl LabeledDataset {
    pub fn new(shape: [usize; 3], images: Vec<u8>, labels: Labels, split: Split) -> Result<Self> {
        let size: usize = shape.iter().product();
        if size == 0 || !images.len().is_multiple_of(size) {
            return Err(Error::shape(format!("{} bytes do not hold {shape:?} images", images.len())));
        }
        if images.len() / size != labels.len() {
            return Err(Error::CountMismatch {
                images: images.len() / size,
                labels: labels.len(),
            });
        }
        Ok(LabeledDataset {
            shape,
            images,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_size(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let s = self.image_size();
        &self.images[i * s..(i + 1) * s]
    }

    /// Single-class labels; errors on a multilabel dataset.
    pub fn single_labels(&self) -> Result<&[usize]> {
        match &self.labels {
            Labels::Single(v) => Ok(v),
            Labels::Multi(_) => Err(Error::invalid("dataset has multilabel targets")),
        }
    }

    pub fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.len() {
            return Err(Error::invalid(format!("index {i} out of range for {} images", self.len())));
        }
        Ok(())
    }

    /// Image `i` scaled to [0, 1].
    pub fn unit_tensor(&self, i: usize) -> Tensor {
        Tensor::new(self.shape.to_vec(), self.image(i).iter().map(|&b| b as f32 / 255.0).collect())
            .expect("dataset shape")
    }
}

/// Maps [0, 1] pixels to model inputs: `(x - mean[c]) / std[c]` per channel
/// when statistics are given, identity otherwise.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<Vec<f32>>,
}

impl Preprocess {
    fn stats(&self, c: usize) -> Result<(Vec<f32>, Vec<f32>)> {
        let mean = self.mean.clone().unwrap_or_else(|| vec![0.0; c]);
        let std = self.std.clone().unwrap_or_else(|| vec![1.0; c]);
        if mean.len() != c || std.len() != c {
            return Err(Error::invalid(format!("preprocessing statistics must have {c} channels")));
        }
        if std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("std entries must be positive"));
        }
        Ok((mean, std))
    }

    /// Normalizes a `[C, H, W]` tensor in [0, 1] units.
    pub fn apply(&self, unit: &Tensor) -> Result<Tensor> {
        let (c, h, w) = unit.dims3()?;
        let (mean, std) = self.stats(c)?;
        let plane = h * w;
        let data = unit
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - mean[i / plane]) / std[i / plane])
            .collect();
        Tensor::new(unit.shape().to_vec(), data)
    }

    /// Back to [0, 1] units.
    pub fn invert(&self, input: &Tensor) -> Result<Tensor> {
        let (c, h, w) = input.dims3()?;
        let (mean, std) = self.stats(c)?;
        let plane = h * w;
        let data = input
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * std[i / plane] + mean[i / plane])
            .collect();
        Tensor::new(input.shape().to_vec(), data)
    }

    /// Input-space bounds of the [0, 1] pixel range, over all channels.
    pub fn bounds(&self, channels: usize) -> Result<(f32, f32)> {
        let (mean, std) = self.stats(channels)?;
        let lo = (0..channels).map(|c| -mean[c] / std[c]).fold(f32::INFINITY, f32::min);
        let hi = (0..channels).map(|c| (1.0 - mean[c]) / std[c]).fold(f32::NEG_INFINITY, f32::max);
        Ok((lo, hi))
    }

    pub fn tensor(&self, data: &LabeledDataset, i: usize) -> Result<Tensor> {
        data.check_index(i)?;
        self.apply(&data.unit_tensor(i))
    }
}

/// Nearest quantization of [0, 1] values back to bytes.
pub fn quantize(unit: &Tensor) -> Vec<u8> {
    unit.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Idx,
    Cifar10,
}

/// JSON description of a dataset on disk. Relative paths are resolved
/// against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: DatasetFormat,
    /// IDX: `[images, labels]`; CIFAR-10: one or more batch files.
    pub files: Vec<PathBuf>,
    #[serde(default)]
    pub split: Split,
    #[serde(default)]
    pub preprocess: Preprocess,
}

impl DatasetManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(&self, base: &Path) -> Result<LabeledDataset> {
        let files: Vec<PathBuf> = self.files.iter().map(|f| base.join(f)).collect();
        let mut data = match self.format {
            DatasetFormat::Idx => {
                let [images, labels] = files.as_slice() else {
                    return Err(Error::invalid("IDX manifest needs exactly [images, labels]"));
                };
                idx::load_idx(images, labels)?
            }
            DatasetFormat::Cifar10 => cifar::load_cifar10_bin(&files)?,
        };
        data.split = self.split;
        Ok(data)
    }
}

/// Reads a manifest and the dataset it describes.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<(LabeledDataset, Preprocess)> {
    let path = path.as_ref();
    let manifest = DatasetManifest::read(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok((manifest.load(base)?, manifest.preprocess))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_mismatch_is_rejected() {
        let err = LabeledDataset::new([1, 2, 2], vec![0; 8], Labels::Single(vec![0]), Split::Test).unwrap_err();
        assert!(matches!(err, Error::CountMismatch { images: 2, labels: 1 }));
    }

    #[test]
    fn preprocessing_round_trips_through_quantization() {
        let data = LabeledDataset::new([3, 1, 2], (0..6).map(|v| v * 40).collect(), Labels::Single(vec![1]), Split::Test)
            .unwrap();
        let prep = Preprocess {
            mean: Some(vec![0.49, 0.48, 0.45]),
            std: Some(vec![0.25, 0.24, 0.26]),
        };
        let x = prep.tensor(&data, 0).unwrap();
        assert_eq!(quantize(&prep.invert(&x).unwrap()), data.image(0));
        let (lo, hi) = prep.bounds(3).unwrap();
        assert!(x.data().iter().all(|v| (lo..=hi).contains(v)));
    }

    #[test]
    fn identity_preprocess() {
        let t = Tensor::from_fn(&[1, 2, 2], |i| i as f32 / 4.0);
        assert_eq!(Preprocess::default().apply(&t).unwrap(), t);
        assert_eq!(Preprocess::default().bounds(1).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn bad_statistics_are_rejected() {
        let t = Tensor::zeros(&[2, 1, 1]);
        let prep = Preprocess {
            mean: Some(vec![0.5]),
            std: None,
        };
        assert!(prep.apply(&t).is_err());
        let prep = Preprocess {
            mean: None,
            std: Some(vec![1.0, 0.0]),
        };
        assert!(prep.apply(&t).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = LabeledDataset::new([1, 2, 2], vec![1, 2, 3, 4], Labels::Single(vec![7]), Split::Train).unwrap();
        idx::write_idx(&data, dir.path().join("img"), dir.path().join("lbl")).unwrap();
        let m = DatasetManifest {
            format: DatasetFormat::Idx,
            files: vec!["img".into(), "lbl".into()],
            split: Split::Train,
            preprocess: Preprocess::default(),
        };
        m.write(dir.path().join("d.json")).unwrap();
        let (back, prep) = load_manifest(dir.path().join("d.json")).unwrap();
        assert_eq!(back, data);
        assert_eq!(prep, Preprocess::default());
    }
}
