//! Multi-digit canvases built from single-digit images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::transform::Rect;
use super::{LabeledDataset, Labels};
use crate::attack::candidate_seed;
use crate::error::{Error, Result};

pub const CANVAS: (usize, usize) = (64, 84);
const RETRIES: usize = 100;

/// A generated dataset and, per image, the pasted digit boxes in canvas
/// coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct M2nist {
    pub data: LabeledDataset,
    pub boxes: Vec<Vec<Rect>>,
}

fn place(rng: &mut ChaCha8Rng, n: usize, (ch, cw): (usize, usize), (dh, dw): (usize, usize)) -> Option<Vec<Rect>> {
    let mut boxes: Vec<Rect> = Vec::with_capacity(n);
    for _ in 0..n {
        let found = (0..RETRIES).find_map(|_| {
            let r = Rect::new(rng.random_range(0..=ch - dh), rng.random_range(0..=cw - dw), dh, dw);
            (!boxes.iter().any(|b| b.intersects(&r))).then_some(r)
        })?;
        boxes.push(found);
    }
    Some(boxes)
}

/// Nearest-neighbour resize of one single-channel image.
pub fn resize_nearest(src: &[u8], h: usize, w: usize, oh: usize, ow: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let sy = ((2 * y + 1) * h / (2 * oh)).min(h - 1);
        for x in 0..ow {
            let sx = ((2 * x + 1) * w / (2 * ow)).min(w - 1);
            out.push(src[sy * w + sx]);
        }
    }
    out
}

/// Pastes 1 to 3 random digits from `mnist` onto each of `count` blank
/// canvases, with pairwise-disjoint boxes and no other transform. Each label
/// is the sorted set of pasted classes. With `out_size`, canvases are
/// downscaled by nearest neighbour after pasting.
pub fn gen_m2nist(
    mnist: &LabeledDataset,
    count: usize,
    seed: u64,
    canvas: (usize, usize),
    out_size: Option<(usize, usize)>,
) -> Result<M2nist> {
    if mnist.is_empty() {
        return Err(Error::invalid("source dataset is empty"));
    }
    let [c, dh, dw] = mnist.shape;
    if c != 1 {
        return Err(Error::invalid("digit images must be single-channel"));
    }
    let (ch, cw) = canvas;
    if dh > ch || dw > cw {
        return Err(Error::invalid(format!("{dh}x{dw} digits do not fit a {ch}x{cw} canvas")));
    }
    let labels = mnist.single_labels()?;
    let (oh, ow) = out_size.unwrap_or(canvas);
    if oh == 0 || ow == 0 {
        return Err(Error::invalid("output size must be non-empty"));
    }
    let samples: Vec<(Vec<u8>, Vec<usize>, Vec<Rect>)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(candidate_seed(seed, i));
            let boxes = loop {
                let n = rng.random_range(1..=3);
                if let Some(b) = place(&mut rng, n, canvas, (dh, dw)) {
                    break b;
                }
            };
            let mut img = vec![0u8; ch * cw];
            let mut classes = Vec::with_capacity(boxes.len());
            for b in &boxes {
                let d = rng.random_range(0..mnist.len());
                classes.push(labels[d]);
                let digit = mnist.image(d);
                for y in 0..dh {
                    let row = (b.y + y) * cw + b.x;
                    img[row..row + dw].copy_from_slice(&digit[y * dw..(y + 1) * dw]);
                }
            }
            classes.sort_unstable();
            classes.dedup();
            if (oh, ow) != canvas {
                img = resize_nearest(&img, ch, cw, oh, ow);
            }
            (img, classes, boxes)
        })
        .collect();
    let mut images = Vec::with_capacity(count * oh * ow);
    let mut sets = Vec::with_capacity(count);
    let mut boxes = Vec::with_capacity(count);
    for (img, cls, b) in samples {
        images.extend(img);
        sets.push(cls);
        boxes.push(b);
    }
    Ok(M2nist {
        data: LabeledDataset::new([1, oh, ow], images, Labels::Multi(sets), mnist.split)?,
        boxes,
    })
}
