use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::args::*;

#[derive(Debug, Parser)]
#[command(name = "diffpath", version, about = "Diffusion pathways of CNN classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a randomly initialized model (vgg16, tiny or toy).
    MakeModel(MakeModel),
    /// Print the prediction and logits for one image.
    Classify(Classify),
    /// Extract pathways of images: aggregates, parts, saliency, portion-hot.
    Pathways(Pathways),
    /// Render top-K parts from an aggregates file.
    Parts(Parts),
    /// Render a saliency map from an aggregates file.
    Saliency(SaliencyCmd),
    /// Portion-hot vectors of many images as CSV.
    PortionHot(PortionHot),
    /// Pairwise L2 distances between portion-hot rows.
    Distances(Distances),
    /// Category centers of portion-hot rows.
    Centers(Centers),
    /// One-way ANOVA over CSV columns or over labels.
    Anova(Anova),
    /// FGSM adversarial groups and their portion-hot distances.
    StudyAdversarial(StudyAdversarial),
    /// Rotation groups and their portion-hot distances.
    StudyRotate(StudyTransform),
    /// Occlusion groups and their portion-hot distances.
    StudyOcclude(StudyTransform),
    /// Grad-CAM heatmap next to the pathway saliency map.
    Gradcam(GradCamCmd),
    /// Agreement between pathway and importance channel rankings.
    Overlap(Overlap),
    /// Generate multi-digit canvases from an IDX digit dataset.
    M2nist(M2nistCmd),
}

#[derive(Debug, Args, Serialize)]
pub struct MakeModel {
    #[arg(long)]
    pub arch: String,
    /// Input shape as CxHxW.
    #[arg(long, default_value = "3x32x32", value_parser = parse_shape)]
    pub input: [usize; 3],
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct Classify {
    #[command(flatten)]
    #[serde(flatten)]
    pub inputs: Inputs,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Also write run.json and classify.json here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    pub exec: Exec,
}

#[derive(Debug, Args, Serialize)]
pub struct Pathways {
    #[command(flatten)]
    #[serde(flatten)]
    pub inputs: Inputs,
    /// Dataset indices (default 0).
    #[arg(long, value_delimiter = ',')]
    pub index: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub pathway: PathwayArgs,
    /// Pathway layer of the saliency map (default: last pool).
    #[arg(long)]
    pub layer: Option<usize>,
    /// Skip writing the ReLU and channel masks.
    #[arg(long)]
    pub no_masks_dump: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(skip)]
    pub exec: Exec,
}

#[derive(Debug, Args, Serialize)]
pub struct Parts {
    #[arg(long)]
    pub aggregates: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub topk: usize,
    /// Pathway layer (default: all).
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SaliencyCmd {
    #[arg(long)]
    pub aggregates: PathBuf,
    /// Pathway layer (default: last).
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PortionHot {
    #[command(flatten)]
    #[serde(flatten)]
    pub inputs: Inputs,
    #[command(flatten)]
    #[serde(flatten)]
    pub select: Selection,
    #[command(flatten)]
    #[serde(flatten)]
    pub pathway: PathwayArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(skip)]
    pub exec: Exec,
}

#[derive(Debug, Args, Serialize)]
pub struct Distances {
    /// Portion-hot CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct Centers {
    /// Portion-hot CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Dataset manifest supplying the labels of the CSV ids.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct Anova {
    /// A distances CSV (every column after the first is a group) or, with
    /// `--dataset`, a portion-hot CSV grouped by label.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct StudyAdversarial {
    #[command(flatten)]
    #[serde(flatten)]
    pub inputs: Inputs,
    /// Groups to build.
    #[arg(long, default_value_t = 400)]
    pub count: usize,
    /// FGSM step, in model input units.
    #[arg(long, default_value_t = 0.03)]
    pub eps: f32,
    /// Step doublings tried before giving up on an image.
    #[arg(long, default_value_t = 5)]
    pub max_attempts: u32,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub pathway: PathwayArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(skip)]
    pub exec: Exec,
}

#[derive(Debug, Args, Serialize)]
pub struct StudyTransform {
    #[command(flatten)]
    #[serde(flatten)]
    pub inputs: Inputs,
    #[arg(long, default_value_t = 300)]
    pub count: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub pathway: PathwayArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(skip)]
    pub exec: Exec,
}

#[derive(Debug, Args, Serialize)]
pub struct GradCamCmd {
    #[command(flatten)]
    #[serde(flatten)]
    pub inputs: Inputs,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Layer name (default: conv3_3, else the last conv).
    #[arg(long)]
    pub layer: Option<String>,
    /// Target class (default: predicted).
    #[arg(long)]
    pub class: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub pathway: PathwayArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(skip)]
    pub exec: Exec,
}

#[derive(Debug, Args, Serialize)]
pub struct Overlap {
    #[command(flatten)]
    #[serde(flatten)]
    pub inputs: Inputs,
    #[command(flatten)]
    #[serde(flatten)]
    pub select: Selection,
    /// Ranking depth.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub pathway: PathwayArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(skip)]
    pub exec: Exec,
}

#[derive(Debug, Args, Serialize)]
pub struct M2nistCmd {
    /// Manifest of the single-digit source dataset.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Canvas size as HxW (default 64x84).
    #[arg(long, value_parser = parse_size)]
    pub canvas: Option<(usize, usize)>,
    /// Downscale canvases to HxW.
    #[arg(long, value_parser = parse_size)]
    pub size: Option<(usize, usize)>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(skip)]
    pub exec: Exec,
}

impl Command {
    pub fn threads(&self) -> Option<usize> {
        match self {
            Command::Classify(a) => a.exec.threads,
            Command::Pathways(a) => a.exec.threads,
            Command::PortionHot(a) => a.exec.threads,
            Command::StudyAdversarial(a) => a.exec.threads,
            Command::StudyRotate(a) | Command::StudyOcclude(a) => a.exec.threads,
            Command::Gradcam(a) => a.exec.threads,
            Command::Overlap(a) => a.exec.threads,
            Command::M2nist(a) => a.exec.threads,
            _ => None,
        }
    }
}
