//! Rotation and occlusion, and the search for prediction-preserving and
//! prediction-changing versions of an image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Preprocess;
use crate::analysis::{l2_distance, PortionHotVector};
use crate::attack::{candidate_seed, first_successes, GroupBuild};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

impl Rect {
    pub fn new(y: usize, x: usize, h: usize, w: usize) -> Self {
        Rect { y, x, h, w }
    }

    pub fn is_empty(&self) -> bool {
        self.h == 0 || self.w == 0
    }

    pub fn intersects(&self, o: &Rect) -> bool {
        !self.is_empty()
            && !o.is_empty()
            && self.y < o.y + o.h
            && o.y < self.y + self.h
            && self.x < o.x + o.w
            && o.x < self.x + self.w
    }
}

/// Exact sine and cosine at multiples of 90 degrees.
fn sin_cos(degrees: f64) -> (f64, f64) {
    let d = degrees.rem_euclid(360.0);
    if d == 0.0 {
        (0.0, 1.0)
    } else if d == 90.0 {
        (1.0, 0.0)
    } else if d == 180.0 {
        (0.0, -1.0)
    } else if d == 270.0 {
        (-1.0, 0.0)
    } else {
        d.to_radians().sin_cos()
    }
}

/// Rotates every channel of a `[C, H, W]` tensor counterclockwise by
/// `degrees` about the image center, with nearest-neighbour sampling and
/// zero fill outside the source frame.
pub fn rotate(image: &Tensor, degrees: f64) -> Result<Tensor> {
    let (c, h, w) = image.dims3()?;
    let (sin, cos) = sin_cos(degrees);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let plane = h * w;
    let mut out = Tensor::zeros(image.shape());
    for y in 0..h {
        for x in 0..w {
            // Inverse map in a y-up frame: u is right, v is up.
            let (u, v) = (x as f64 - cx, cy - y as f64);
            let us = u * cos + v * sin;
            let vs = v * cos - u * sin;
            let sx = (us + cx).round();
            let sy = (cy - vs).round();
            if sx < 0.0 || sy < 0.0 || sx >= w as f64 || sy >= h as f64 {
                continue;
            }
            let src = sy as usize * w + sx as usize;
            for ch in 0..c {
                out.data_mut()[ch * plane + y * w + x] = image.data()[ch * plane + src];
            }
        }
    }
    Ok(out)
}

/// Zeroes `rect` in every channel.
pub fn occlude(image: &Tensor, rect: Rect) -> Result<Tensor> {
    let (c, h, w) = image.dims3()?;
    if rect.y + rect.h > h || rect.x + rect.w > w {
        return Err(Error::invalid(format!("rectangle {rect:?} exceeds a {h}x{w} frame")));
    }
    let mut out = image.clone();
    for ch in 0..c {
        for y in rect.y..rect.y + rect.h {
            let row = ch * h * w + y * w;
            out.data_mut()[row + rect.x..row + rect.x + rect.w].fill(0.0);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Rotate,
    Occlude,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Rotate { degrees: f64 },
    Occlude(Rect),
}

impl Transform {
    pub fn apply(&self, image: &Tensor) -> Result<Tensor> {
        match *self {
            Transform::Rotate { degrees } => rotate(image, degrees),
            Transform::Occlude(r) => occlude(image, r),
        }
    }
}

/// Number of candidate transforms tried per image.
pub const SWEEP_LEN: usize = 35;

/// Angles 10°, 20°, …, 350°.
pub fn rotation_sweep() -> Vec<Transform> {
    (1..=SWEEP_LEN).map(|k| Transform::Rotate { degrees: k as f64 * 10.0 }).collect()
}

/// `SWEEP_LEN` rectangles with sides between 4 (or the half-frame, if
/// smaller) and half the frame, at uniform positions.
pub fn occlusion_sweep(h: usize, w: usize, rng: &mut impl Rng) -> Vec<Transform> {
    let (hh, hw) = ((h / 2).max(1), (w / 2).max(1));
    (0..SWEEP_LEN)
        .map(|_| {
            let rh = rng.random_range(4.min(hh)..=hh);
            let rw = rng.random_range(4.min(hw)..=hw);
            let y = rng.random_range(0..=h - rh);
            let x = rng.random_range(0..=w - rw);
            Transform::Occlude(Rect::new(y, x, rh, rw))
        })
        .collect()
}

/// An original image with one transformed version that keeps its predicted
/// class, one that changes it, and a sample of the changed class. Images are
/// in [0, 1] pixel units.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformGroup {
    pub original_index: usize,
    pub label: usize,
    pub invariant: Tensor,
    pub invariant_transform: Transform,
    pub variant: Tensor,
    pub variant_transform: Transform,
    pub variant_prediction: usize,
    pub target_index: usize,
}

/// Builds up to `count` transform groups. `images` are in [0, 1] units and
/// pass through `prep` before the model sees them. Candidate order and each
/// candidate's rectangles and target draw are derived from `seed`.
pub fn build_transform_groups(
    model: &Model,
    images: &[Tensor],
    labels: &[usize],
    kind: TransformKind,
    count: usize,
    seed: u64,
    prep: &Preprocess,
) -> Result<GroupBuild<TransformGroup>> {
    if images.len() != labels.len() {
        return Err(Error::CountMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    let predict = |x: &Tensor| model.predict(&prep.apply(x)?);
    first_successes(images.len(), count, seed, |i| {
        let (image, label) = (&images[i], labels[i]);
        if predict(image)? != label {
            return Ok(None);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(candidate_seed(seed, i));
        let sweep = match kind {
            TransformKind::Rotate => rotation_sweep(),
            TransformKind::Occlude => {
                let (_, h, w) = image.dims3()?;
                occlusion_sweep(h, w, &mut rng)
            }
        };
        let mut invariant = None;
        let mut variant = None;
        for t in sweep {
            if invariant.is_some() && variant.is_some() {
                break;
            }
            let x = t.apply(image)?;
            let pred = predict(&x)?;
            if pred == label {
                invariant.get_or_insert((t, x));
            } else {
                variant.get_or_insert((t, x, pred));
            }
        }
        let (Some((it, inv)), Some((vt, var, vp))) = (invariant, variant) else {
            return Ok(None);
        };
        let pool: Vec<usize> = (0..labels.len()).filter(|&j| j != i && labels[j] == vp).collect();
        if pool.is_empty() {
            return Ok(None);
        }
        let target_index = pool[rng.random_range(0..pool.len())];
        Ok(Some(TransformGroup {
            original_index: i,
            label,
            invariant: inv,
            invariant_transform: it,
            variant: var,
            variant_transform: vt,
            variant_prediction: vp,
            target_index,
        }))
    })
}

pub const DISTANCE_COLUMNS: [&str; 6] = [
    "orig_inv",
    "orig_var",
    "inv_var",
    "orig_target",
    "inv_target",
    "var_target",
];

/// The six pairwise distances of a group's portion-hot vectors, ordered as
/// `DISTANCE_COLUMNS`.
pub fn group_distances(
    original: &PortionHotVector,
    invariant: &PortionHotVector,
    variant: &PortionHotVector,
    target: &PortionHotVector,
) -> Result<[f64; 6]> {
    Ok([
        l2_distance(original, invariant)?,
        l2_distance(original, variant)?,
        l2_distance(invariant, variant)?,
        l2_distance(original, target)?,
        l2_distance(invariant, target)?,
        l2_distance(variant, target)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: &[usize], v: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn rotate_quarter_turn_counterclockwise() {
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(rotate(&x, 90.0).unwrap().data(), &[2.0, 4.0, 1.0, 3.0]);
        assert_eq!(rotate(&x, 0.0).unwrap(), x);
    }

    #[test]
    fn half_turn_of_odd_frame() {
        let x = Tensor::from_fn(&[2, 3, 3], |i| i as f32);
        let r = rotate(&x, 180.0).unwrap();
        for c in 0..2 {
            for y in 0..3 {
                for xx in 0..3 {
                    assert_eq!(r.get(&[c, y, xx]), x.get(&[c, 2 - y, 2 - xx]));
                }
            }
        }
    }

    #[test]
    fn off_axis_rotation_fills_corners_with_zero() {
        let x = Tensor::filled(&[1, 8, 8], 1.0);
        let r = rotate(&x, 45.0).unwrap();
        assert_eq!(r.get(&[0, 0, 0]), 0.0);
        assert_eq!(r.get(&[0, 4, 4]), 1.0);
    }

    #[test]
    fn occlusion_edges() {
        let x = Tensor::from_fn(&[3, 4, 5], |i| i as f32 + 1.0);
        assert_eq!(occlude(&x, Rect::new(2, 3, 0, 0)).unwrap(), x);
        assert!(occlude(&x, Rect::new(0, 0, 4, 5)).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(occlude(&x, Rect::new(1, 1, 4, 1)).is_err());
    }

    #[test]
    fn sweeps_have_the_expected_shape() {
        assert_eq!(rotation_sweep().len(), SWEEP_LEN);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for tr in occlusion_sweep(32, 32, &mut rng) {
            let Transform::Occlude(r) = tr else { panic!() };
            assert!((4..=16).contains(&r.h) && (4..=16).contains(&r.w));
            assert!(r.y + r.h <= 32 && r.x + r.w <= 32);
        }
    }

    proptest! {
        #[test]
        fn four_quarter_turns_are_identity(n in 1usize..7, seed in 0u64..1000) {
            let x = Tensor::from_fn(&[2, n, n], |i| ((i as u64 * 31 + seed) % 17) as f32);
            let mut r = x.clone();
            for _ in 0..4 {
                r = rotate(&r, 90.0).unwrap();
            }
            prop_assert_eq!(r, x);
        }

        #[test]
        fn disjoint_occlusions_commute(
            a in (0usize..6, 0usize..6, 0usize..4, 0usize..4),
            b in (0usize..6, 0usize..6, 0usize..4, 0usize..4),
        ) {
            let (ra, rb) = (Rect::new(a.0, a.1, a.2, a.3), Rect::new(b.0, b.1, b.2, b.3));
            prop_assume!(!ra.intersects(&rb));
            let x = Tensor::from_fn(&[2, 10, 10], |i| i as f32 + 1.0);
            let ab = occlude(&occlude(&x, ra).unwrap(), rb).unwrap();
            let ba = occlude(&occlude(&x, rb).unwrap(), ra).unwrap();
            prop_assert_eq!(ab, ba);
        }
    }
}
