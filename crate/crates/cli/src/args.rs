use std::path::PathBuf;

use clap::{Args, ValueEnum};
use diffpath::analysis::RankEnd;
use diffpath::pathway::{ChannelMask, ImportanceMethod, PathwayOptions};
use serde::Serialize;

/// Accepts `off` or `topk:N`.
pub fn parse_channel_mask(s: &str) -> Result<ChannelMask, String> {
    if s == "off" {
        return Ok(ChannelMask::Off);
    }
    match s.strip_prefix("topk:").map(str::parse::<usize>) {
        Some(Ok(n)) if n > 0 => Ok(ChannelMask::TopK(n)),
        _ => Err(format!("expected `off` or `topk:N` with N >= 1, got {s:?}")),
    }
}

/// Accepts `HxW`.
pub fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once('x').ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    match (h.parse(), w.parse()) {
        (Ok(h), Ok(w)) if h > 0 && w > 0 => Ok((h, w)),
        _ => Err(format!("expected positive HxW, got {s:?}")),
    }
}

/// Accepts `CxHxW`.
pub fn parse_shape(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split('x')
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|_| format!("expected CxHxW, got {s:?}"))?;
    match parts[..] {
        [c, h, w] if c * h * w > 0 => Ok([c, h, w]),
        _ => Err(format!("expected positive CxHxW, got {s:?}")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImportanceArg {
    ActivationL1,
    GradTimesActivation,
}

impl From<ImportanceArg> for ImportanceMethod {
    fn from(a: ImportanceArg) -> Self {
        match a {
            ImportanceArg::ActivationL1 => ImportanceMethod::ActivationL1,
            ImportanceArg::GradTimesActivation => ImportanceMethod::GradTimesActivation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EndArg {
    Largest,
    Smallest,
}

impl From<EndArg> for RankEnd {
    fn from(a: EndArg) -> Self {
        match a {
            EndArg::Largest => RankEnd::Largest,
            EndArg::Smallest => RankEnd::Smallest,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Exec {
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    #[serde(skip)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Inputs {
    /// DPWN weights file.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset manifest (JSON).
    #[arg(long)]
    pub dataset: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PathwayArgs {
    /// `off` or `topk:N` (keep the N most important channels per conv layer).
    #[arg(long, default_value = "off", value_parser = parse_channel_mask)]
    pub channel_mask: ChannelMask,
    /// Channel ranking used by the channel mask.
    #[arg(long, value_enum, default_value = "activation-l1")]
    pub importance: ImportanceArg,
    /// Channels per pixel when assigning parts.
    #[arg(long, default_value_t = 3)]
    pub topk: usize,
    /// Pixels per work unit.
    #[arg(long, default_value_t = 64)]
    #[serde(skip)]
    pub chunk: usize,
}

impl PathwayArgs {
    pub fn options(&self) -> PathwayOptions {
        PathwayOptions {
            channel_mask: self.channel_mask,
            importance: self.importance.into(),
            relu_masks: true,
            chunk: self.chunk,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Selection {
    /// Dataset indices (repeatable or comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub index: Vec<usize>,
    /// Use the first N images when no index is given (default: all).
    #[arg(long)]
    pub count: Option<usize>,
}

impl Selection {
    pub fn resolve(&self, len: usize) -> Vec<usize> {
        if self.index.is_empty() {
            (0..self.count.unwrap_or(len).min(len)).collect()
        } else {
            self.index.clone()
        }
    }
}
