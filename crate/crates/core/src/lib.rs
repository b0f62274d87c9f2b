//! Per-pixel diffusion pathways through convolutional classifiers, and the
//! analyses built on them: parts, saliency, portion-hot vectors, distance and
//! ANOVA statistics, FGSM and transform studies, and a Grad-CAM baseline.

pub mod analysis;
pub mod attack;
pub mod data;
pub mod error;
pub mod model;
pub mod pathway;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{load_model, ForwardTrace, Importance, LayerKind, LayerParams, LayerSpec, Model, ModelSpec};
pub use tensor::Tensor;
