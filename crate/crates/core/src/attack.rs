//! FGSM adversarial examples, adversarial triples and a Grad-CAM baseline.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::min_max;
use crate::error::{Error, Result};
use crate::model::{LayerKind, Model, ModelSpec};
use crate::tensor::{softmax_cross_entropy, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub epsilon: f32,
    pub lo: f32,
    pub hi: f32,
    /// FGSM tries per candidate; each retry doubles ε.
    pub max_attempts: u32,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 0.03,
            lo: 0.0,
            hi: 1.0,
            max_attempts: 5,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo < self.hi) || !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(Error::invalid(format!(
                "attack config needs lo < hi and finite ε >= 0 (lo {}, hi {}, ε {})",
                self.lo, self.hi, self.epsilon
            )));
        }
        if self.max_attempts == 0 {
            return Err(Error::invalid("max_attempts must be at least 1"));
        }
        Ok(())
    }
}

/// Gradient of the softmax cross-entropy at `label` with respect to the image.
pub fn input_gradient(model: &Model, image: &Tensor, label: usize) -> Result<Tensor> {
    let trace = model.forward_trace(image)?;
    let (_, grad_logits) = softmax_cross_entropy(&trace.logits, label)?;
    Ok(model.backward(&trace, &grad_logits, 0)?.input_grad.expect("requested down to the input"))
}

/// `clip(image + ε·sign(grad), lo, hi)` with `sign(0) = 0`.
pub fn fgsm_step(image: &Tensor, grad: &Tensor, epsilon: f32, lo: f32, hi: f32) -> Result<Tensor> {
    if image.shape() != grad.shape() {
        return Err(Error::shape(format!("image {:?} vs gradient {:?}", image.shape(), grad.shape())));
    }
    let data = image
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&x, &g)| {
            let s = if g > 0.0 {
                1.0
            } else if g < 0.0 {
                -1.0
            } else {
                0.0
            };
            (x + epsilon * s).clamp(lo, hi)
        })
        .collect();
    Tensor::new(image.shape().to_vec(), data)
}

pub fn fgsm(model: &Model, image: &Tensor, label: usize, config: &AttackConfig) -> Result<Tensor> {
    config.validate()?;
    let grad = input_gradient(model, image, label)?;
    fgsm_step(image, &grad, config.epsilon, config.lo, config.hi)
}

/// Original, its adversarial version, and a sample of the class the
/// adversarial version is predicted as.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialGroup {
    pub original_index: usize,
    pub label: usize,
    pub adversarial: Tensor,
    pub adversarial_prediction: usize,
    pub target_index: usize,
    pub epsilon: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupBuild<G> {
    pub groups: Vec<G>,
    /// Set when fewer groups than requested were found.
    pub warning: Option<String>,
}

/// Seed of the per-candidate generator.
pub fn candidate_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Candidate order: dataset indices shuffled under `seed`.
pub fn candidate_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Runs `try_one` over candidates in seeded order, in parallel batches, and
/// keeps the first `count` successes in that order.
pub(crate) fn first_successes<G: Send>(
    n: usize,
    count: usize,
    seed: u64,
    try_one: impl Fn(usize) -> Result<Option<G>> + Sync,
) -> Result<GroupBuild<G>> {
    if count == 0 {
        return Err(Error::invalid("count must be at least 1"));
    }
    let order = candidate_order(n, seed);
    let batch = (count * 2).max(rayon::current_num_threads() * 2);
    let mut groups = Vec::with_capacity(count);
    for chunk in order.chunks(batch) {
        let found: Vec<Option<G>> = chunk.par_iter().map(|&i| try_one(i)).collect::<Result<_>>()?;
        groups.extend(found.into_iter().flatten());
        if groups.len() >= count {
            groups.truncate(count);
            break;
        }
    }
    let warning = (groups.len() < count).then(|| format!("found {} of {count} requested groups", groups.len()));
    Ok(GroupBuild { groups, warning })
}

/// Builds up to `count` adversarial groups from `images`/`labels`.
///
/// Candidates are visited in an order shuffled by `seed`; each uses its own
/// generator derived from `seed` and its index, so results do not depend on
/// the thread count.
pub fn build_adversarial_groups(
    model: &Model,
    images: &[Tensor],
    labels: &[usize],
    count: usize,
    config: &AttackConfig,
    seed: u64,
) -> Result<GroupBuild<AdversarialGroup>> {
    config.validate()?;
    if images.len() != labels.len() {
        return Err(Error::CountMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    first_successes(images.len(), count, seed, |i| {
        let (image, label) = (&images[i], labels[i]);
        if model.predict(image)? != label {
            return Ok(None);
        }
        let grad = input_gradient(model, image, label)?;
        let mut eps = config.epsilon;
        for _ in 0..config.max_attempts {
            let adv = fgsm_step(image, &grad, eps, config.lo, config.hi)?;
            let pred = model.predict(&adv)?;
            if pred != label {
                let pool: Vec<usize> = (0..labels.len()).filter(|&j| j != i && labels[j] == pred).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(candidate_seed(seed, i));
                return Ok(pool.choose(&mut rng).map(|&target_index| AdversarialGroup {
                    original_index: i,
                    label,
                    adversarial: adv,
                    adversarial_prediction: pred,
                    target_index,
                    epsilon: eps,
                }));
            }
            eps *= 2.0;
        }
        Ok(None)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCam {
    /// Spatial mean of d logit / d activation, per channel.
    pub alpha: Vec<f64>,
    /// `ReLU(Σ α_c A_c)` at the layer's resolution.
    pub cam: Tensor,
    /// `cam` resized to the image and min-max normalized.
    pub heatmap: Tensor,
}

/// The `conv3_3` layer when present, otherwise the last conv layer.
pub fn default_gradcam_layer(spec: &ModelSpec) -> Option<usize> {
    spec.layer_index("conv3_3").or_else(|| {
        spec.layers()
            .iter()
            .rposition(|l| matches!(l.kind, LayerKind::Conv { .. }))
    })
}

/// Grad-CAM of `class` at conv layer `layer`, using the activation after
/// its ReLU.
pub fn grad_cam(model: &Model, image: &Tensor, class: usize, layer: usize) -> Result<GradCam> {
    let spec = model.spec();
    match spec.layers().get(layer) {
        Some(l) if matches!(l.kind, LayerKind::Conv { .. }) => {}
        _ => return Err(Error::invalid(format!("layer {layer} is not a conv layer"))),
    }
    if class >= spec.classes() {
        return Err(Error::invalid(format!("class {class} out of range")));
    }
    let trace = model.forward_trace(image)?;
    let act_layer = spec.activation_layer(layer);
    let mut onehot = Tensor::zeros(trace.logits.shape());
    onehot.data_mut()[class] = 1.0;
    let back = model.backward(&trace, &onehot, act_layer)?;
    let grad = back.layer_grads[act_layer].as_ref().expect("computed down to the layer");
    let act = &trace.outputs[act_layer];
    let (c, h, w) = act.dims3()?;
    let plane = h * w;
    let alpha: Vec<f64> = (0..c)
        .map(|ch| grad.data()[ch * plane..(ch + 1) * plane].iter().map(|&g| g as f64).sum::<f64>() / plane as f64)
        .collect();
    let cam: Vec<f64> = (0..plane)
        .map(|p| (0..c).map(|ch| alpha[ch] * act.data()[ch * plane + p] as f64).sum::<f64>().max(0.0))
        .collect();
    let [_, ih, iw] = spec.input_shape();
    let resized = bilinear_resize(&cam, h, w, ih, iw);
    Ok(GradCam {
        alpha,
        cam: Tensor::new(vec![h, w], cam.iter().map(|&v| v as f32).collect())?,
        heatmap: Tensor::new(vec![ih, iw], min_max(&resized))?,
    })
}

/// Bilinear resampling with pixel centers aligned (half-pixel offsets) and
/// edge clamping.
pub fn bilinear_resize(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let coord = |o: usize, n_in: usize, n_out: usize| {
        let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = s.floor() as usize;
        (i0, (i0 + 1).min(n_in - 1), s - i0 as f64)
    };
    let mut out = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        let (y0, y1, fy) = coord(oy, h, oh);
        for ox in 0..ow {
            let (x0, x1, fx) = coord(ox, w, ow);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}
