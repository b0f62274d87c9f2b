//! Downstream statistics over pathway aggregates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};
use crate::model::{rank_descending, ForwardTrace, Importance, LayerKind, Model, ModelSpec};
use crate::pathway::{LayerPathwayAggregate, PathwayResult};
use crate::tensor::Tensor;

pub const DEFAULT_PART_K: usize = 3;

/// Top-K channel assignment of every pixel at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PartAssignment {
    pub layer: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub k: usize,
    /// Per pixel (row-major), up to `k` channels by descending aggregate.
    pub pixels: Vec<Vec<usize>>,
    /// Pixel count of each channel's part.
    pub sizes: Vec<usize>,
}

impl PartAssignment {
    pub fn channels_at(&self, y: usize, x: usize) -> &[usize] {
        &self.pixels[y * self.width + x]
    }

    /// Area ratio of each channel's part.
    pub fn ratios(&self) -> Vec<f64> {
        let n = (self.height * self.width) as f64;
        self.sizes.iter().map(|&s| s as f64 / n).collect()
    }

    /// Pixels belonging to the part of `channel`.
    pub fn part(&self, channel: usize) -> Vec<(usize, usize)> {
        self.pixels
            .iter()
            .enumerate()
            .filter(|(_, list)| list.contains(&channel))
            .map(|(i, _)| (i / self.width, i % self.width))
            .collect()
    }

    /// Channel with the largest part, lowest index on ties, and its ratio.
    pub fn largest(&self) -> (usize, f64) {
        let ratios = self.ratios();
        let c = rank_descending(&ratios)[0];
        (c, ratios[c])
    }
}

/// Assigns each pixel its `k` largest positive channels; ties go to the
/// lower channel index. Pixels with no positive channel stay unassigned.
pub fn parts_topk(agg: &LayerPathwayAggregate, k: usize) -> Result<PartAssignment> {
    if k == 0 || k > agg.channels {
        return Err(Error::invalid(format!("K={k} outside 1..={}", agg.channels)));
    }
    let mut sizes = vec![0usize; agg.channels];
    let mut pixels = Vec::with_capacity(agg.height * agg.width);
    let mut order: Vec<usize> = Vec::with_capacity(agg.channels);
    for row in agg.values.chunks_exact(agg.channels) {
        order.clear();
        order.extend((0..agg.channels).filter(|&c| row[c] > 0.0));
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        order.truncate(k);
        for &c in &order {
            sizes[c] += 1;
        }
        pixels.push(order.clone());
    }
    Ok(PartAssignment {
        layer: agg.layer,
        height: agg.height,
        width: agg.width,
        channels: agg.channels,
        k,
        pixels,
        sizes,
    })
}

/// Per-pixel maximum over channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Saliency {
    pub layer: usize,
    /// `[height, width]`, row-major.
    pub raw: Vec<f64>,
    /// `raw` min-max scaled to [0, 1]; all zeros when `raw` is constant.
    pub normalized: Tensor,
}

pub fn saliency_map(result: &PathwayResult, layer: usize) -> Result<Saliency> {
    let agg = result.layer(layer)?;
    let raw: Vec<f64> = agg
        .values
        .chunks_exact(agg.channels)
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let normalized = Tensor::new(vec![agg.height, agg.width], min_max(&raw))?;
    Ok(Saliency { layer, raw, normalized })
}

pub(crate) fn min_max(values: &[f64]) -> Vec<f32> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) || !(hi - lo).is_finite() {
        return vec![0.0; values.len()];
    }
    values.iter().map(|&v| ((v - lo) / (hi - lo)) as f32).collect()
}

/// Pathway index of the last pooling layer, or the last pathway layer when
/// the model has no pooling.
pub fn default_saliency_layer(spec: &ModelSpec) -> usize {
    let layers = spec.pathway_layers();
    layers
        .iter()
        .rposition(|&l| matches!(spec.layers()[l].kind, LayerKind::MaxPool))
        .unwrap_or(layers.len().saturating_sub(1))
}

/// Concatenated part area ratios of every pathway layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortionHotVector {
    pub values: Vec<f64>,
    pub k: usize,
}

pub fn portion_hot(result: &PathwayResult, k: usize) -> Result<PortionHotVector> {
    if result.layers.is_empty() {
        return Err(Error::invalid("pathway result has no layers"));
    }
    let mut values = Vec::with_capacity(result.channel_counts().iter().sum());
    for agg in &result.layers {
        values.extend(parts_topk(agg, k.min(agg.channels))?.ratios());
    }
    Ok(PortionHotVector { values, k })
}

pub fn l2_distance(a: &PortionHotVector, b: &PortionHotVector) -> Result<f64> {
    if a.k != b.k {
        return Err(Error::invalid(format!("vectors built with K={} and K={}", a.k, b.k)));
    }
    l2(&a.values, &b.values)
}

fn l2(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("lengths {} and {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCenters {
    pub per_label: BTreeMap<usize, Vec<f64>>,
    pub counts: BTreeMap<usize, usize>,
    pub global: Vec<f64>,
}

/// Per-label and global means, accumulated as running means.
pub fn category_centers(vectors: &[PortionHotVector], labels: &[usize]) -> Result<CategoryCenters> {
    if vectors.is_empty() {
        return Err(Error::invalid("no vectors"));
    }
    if vectors.len() != labels.len() {
        return Err(Error::CountMismatch {
            images: vectors.len(),
            labels: labels.len(),
        });
    }
    let dim = vectors[0].values.len();
    let mut per_label: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut global = vec![0f64; dim];
    for (n, (v, &label)) in vectors.iter().zip(labels).enumerate() {
        if v.values.len() != dim {
            return Err(Error::shape(format!("vector {n} has length {}, expected {dim}", v.values.len())));
        }
        running_mean(&mut global, &v.values, n + 1);
        let count = counts.entry(label).or_insert(0);
        *count += 1;
        running_mean(per_label.entry(label).or_insert_with(|| vec![0.0; dim]), &v.values, *count);
    }
    Ok(CategoryCenters { per_label, counts, global })
}

fn running_mean(mean: &mut [f64], x: &[f64], n: usize) {
    for (m, v) in mean.iter_mut().zip(x) {
        *m += (v - *m) / n as f64;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scalarize {
    /// L2 distance of each vector to the mean of all vectors.
    #[default]
    DistToGlobalCenter,
}

pub fn scalarize(vectors: &[PortionHotVector], method: Scalarize) -> Result<Vec<f64>> {
    match method {
        Scalarize::DistToGlobalCenter => {
            let labels = vec![0; vectors.len()];
            let centers = category_centers(vectors, &labels)?;
            vectors.iter().map(|v| l2(&v.values, &centers.global)).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    /// `+inf` (serialized as null) when groups differ but have no spread.
    pub f: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub ss_between: f64,
    pub ss_within: f64,
    pub alpha: f64,
    pub critical: f64,
    pub significant: bool,
    pub zero_within_variance: bool,
}

/// One-way analysis of variance.
pub fn anova_oneway(groups: &[Vec<f64>], alpha: f64) -> Result<AnovaResult> {
    if groups.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 groups, got {}", groups.len())));
    }
    if groups.iter().any(Vec::is_empty) {
        return Err(Error::invalid("empty group"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} outside (0, 1)")));
    }
    let n: usize = groups.iter().map(Vec::len).sum();
    if n <= groups.len() {
        return Err(Error::invalid(format!("{n} samples in {} groups leave no within-group freedom", groups.len())));
    }
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in groups {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        ssb += g.len() as f64 * (m - grand) * (m - grand);
        ssw += g.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    }
    let (df_b, df_w) = (groups.len() - 1, n - groups.len());
    let f = if ssw > 0.0 {
        (ssb / df_b as f64) / (ssw / df_w as f64)
    } else if ssb > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let critical = f_critical(df_b, df_w, alpha)?;
    Ok(AnovaResult {
        f,
        df_between: df_b,
        df_within: df_w,
        ss_between: ssb,
        ss_within: ssw,
        alpha,
        critical,
        significant: f > critical,
        zero_within_variance: ssw == 0.0,
    })
}

/// Upper-tail critical value of the F distribution at level `alpha`.
pub fn f_critical(df1: usize, df2: usize, alpha: f64) -> Result<f64> {
    let dist = FisherSnedecor::new(df1 as f64, df2 as f64).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(dist.inverse_cdf(1.0 - alpha))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankEnd {
    #[default]
    Largest,
    Smallest,
}

/// Number of channels shared by the first `n` entries of two rankings.
pub fn top_n_overlap(a: &[usize], b: &[usize], n: usize) -> usize {
    let head = &b[..n.min(b.len())];
    a.iter().take(n).filter(|c| head.contains(c)).count()
}

fn rank(scores: &[f64], end: RankEnd) -> Vec<usize> {
    match end {
        RankEnd::Largest => rank_descending(scores),
        RankEnd::Smallest => {
            let neg: Vec<f64> = scores.iter().map(|v| -v).collect();
            rank_descending(&neg)
        }
    }
}

/// Overlap between the `n` channels with the largest (or smallest) pathway
/// cross-section totals and the `n` most (or least) important channels.
pub fn ranking_overlap(
    model: &Model,
    result: &PathwayResult,
    trace: &ForwardTrace,
    layer: usize,
    n: usize,
    end: RankEnd,
    method: Importance,
) -> Result<usize> {
    let agg = result.layer(layer)?;
    if n > agg.channels {
        return Err(Error::invalid(format!("n={n} exceeds {} channels", agg.channels)));
    }
    let by_pathway = rank(&agg.channel_totals(), end);
    let by_importance = rank(&model.channel_scores(trace, layer, method)?, end);
    Ok(top_n_overlap(&by_pathway, &by_importance, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathway::ChannelMask;
    use crate::pathway::PathwayOptions;
    use proptest::prelude::*;

    fn agg(h: usize, w: usize, c: usize, values: Vec<f64>) -> LayerPathwayAggregate {
        LayerPathwayAggregate {
            layer: 0,
            height: h,
            width: w,
            channels: c,
            values,
        }
    }

    fn result(layers: Vec<LayerPathwayAggregate>) -> PathwayResult {
        PathwayResult {
            layers,
            options: PathwayOptions {
                channel_mask: ChannelMask::Off,
                ..PathwayOptions::default()
            },
        }
    }

    #[test]
    fn dominant_channel_owns_the_frame() {
        let a = agg(2, 2, 3, [0.1, 0.2, 5.0].repeat(4));
        let p = parts_topk(&a, 1).unwrap();
        assert_eq!(p.ratios(), vec![0.0, 0.0, 1.0]);
        assert_eq!(p.part(2).len(), 4);
    }

    #[test]
    fn zero_aggregate_assigns_nothing() {
        let p = parts_topk(&agg(2, 3, 4, vec![0.0; 24]), 2).unwrap();
        assert!(p.pixels.iter().all(Vec::is_empty));
        assert!(p.ratios().iter().all(|&r| r == 0.0));
    }

    #[test]
    fn ties_go_to_lower_channel() {
        let p = parts_topk(&agg(1, 1, 4, vec![1.0, 3.0, 3.0, 3.0]), 2).unwrap();
        assert_eq!(p.channels_at(0, 0), &[1, 2]);
    }

    #[test]
    fn negative_channels_are_never_parts() {
        let p = parts_topk(&agg(1, 1, 3, vec![-1.0, 2.0, 0.0]), 3).unwrap();
        assert_eq!(p.channels_at(0, 0), &[1]);
    }

    #[test]
    fn k_out_of_range() {
        assert!(parts_topk(&agg(1, 1, 2, vec![1.0, 2.0]), 0).is_err());
        assert!(parts_topk(&agg(1, 1, 2, vec![1.0, 2.0]), 3).is_err());
    }

    #[test]
    fn saliency_examples() {
        let single = result(vec![agg(1, 3, 1, vec![1.0, -2.0, 4.0])]);
        let s = saliency_map(&single, 0).unwrap();
        assert_eq!(s.raw, vec![1.0, -2.0, 4.0]);
        assert_eq!(s.normalized.data(), &[0.5, 0.0, 1.0]);

        let r = result(vec![agg(1, 1, 3, vec![3.0, 7.0, 5.0])]);
        assert_eq!(saliency_map(&r, 0).unwrap().raw, vec![7.0]);
        assert!(saliency_map(&r, 1).is_err());
    }

    #[test]
    fn portion_hot_zero_and_partition() {
        let zero = result(vec![agg(2, 2, 3, vec![0.0; 12]), agg(1, 1, 2, vec![0.0; 2])]);
        let v = portion_hot(&zero, 3).unwrap();
        assert_eq!(v.values, vec![0.0; 5]);

        let r = result(vec![agg(2, 1, 3, vec![1.0, 2.0, 0.5, 4.0, 0.0, 1.0])]);
        let v = portion_hot(&r, 1).unwrap();
        assert_eq!(v.values, vec![0.5, 0.5, 0.0]);
        assert_eq!(v.values.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn distance_examples() {
        let z = PortionHotVector { values: vec![0.0; 3], k: 3 };
        let v = PortionHotVector {
            values: vec![0.0, 3.0, 4.0],
            k: 3,
        };
        assert_eq!(l2_distance(&v, &z).unwrap(), 5.0);
        assert_eq!(l2_distance(&v, &v).unwrap(), 0.0);
        let short = PortionHotVector { values: vec![0.0], k: 3 };
        assert!(l2_distance(&v, &short).is_err());
        let other_k = PortionHotVector { values: vec![0.0; 3], k: 1 };
        assert!(l2_distance(&v, &other_k).is_err());
    }

    #[test]
    fn centers_examples() {
        let v = |x: f64| PortionHotVector { values: vec![x], k: 3 };
        let c = category_centers(&[v(0.0), v(2.0)], &[4, 7]).unwrap();
        assert_eq!(c.per_label[&4], vec![0.0]);
        assert_eq!(c.per_label[&7], vec![2.0]);
        assert_eq!(c.global, vec![1.0]);
        assert!(category_centers(&[], &[]).is_err());
    }

    #[test]
    fn anova_hand_example() {
        let r = anova_oneway(&[vec![0.0, 1.0], vec![2.0, 3.0]], 0.05).unwrap();
        assert!((r.f - 8.0).abs() <= 1e-9);
        assert_eq!((r.df_between, r.df_within), (1, 2));
    }

    #[test]
    fn anova_constant_groups() {
        let r = anova_oneway(&[vec![2.0; 3], vec![2.0; 4]], 0.05).unwrap();
        assert_eq!(r.f, 0.0);
        assert!(!r.significant);
        let r = anova_oneway(&[vec![1.0; 3], vec![2.0; 3]], 0.05).unwrap();
        assert!(r.f.is_infinite() && r.zero_within_variance && r.significant);
    }

    #[test]
    fn anova_degenerate() {
        assert!(anova_oneway(&[vec![1.0, 2.0]], 0.05).is_err());
        assert!(anova_oneway(&[vec![1.0], vec![2.0]], 0.05).is_err());
        assert!(anova_oneway(&[vec![1.0, 3.0], vec![]], 0.05).is_err());
    }

    #[test]
    fn f_critical_reference_points() {
        assert!((f_critical(9, 50, 0.05).unwrap() - 2.08).abs() <= 0.01);
        assert!((f_critical(2, 1197, 0.05).unwrap() - 3.0).abs() <= 0.01);
    }

    #[test]
    fn overlap_examples() {
        let a = [3, 1, 4, 0, 2];
        assert_eq!(top_n_overlap(&a, &a, 3), 3);
        assert_eq!(top_n_overlap(&[0, 1, 2, 3], &[2, 3, 0, 1], 2), 0);
    }

    #[test]
    fn smallest_end_ranks_ascending_with_low_index_ties() {
        assert_eq!(rank(&[2.0, 1.0, 1.0, 0.5], RankEnd::Smallest), vec![3, 1, 2, 0]);
    }

    fn aggregates() -> impl Strategy<Value = LayerPathwayAggregate> {
        (1usize..5, 1usize..5, 1usize..6).prop_flat_map(|(h, w, c)| {
            proptest::collection::vec(-3i32..10, h * w * c).prop_map(move |v| {
                agg(h, w, c, v.into_iter().map(f64::from).collect())
            })
        })
    }

    proptest! {
        #[test]
        fn part_lists_are_consistent(a in aggregates(), k in 1usize..6) {
            let k = k.min(a.channels);
            let p = parts_topk(&a, k).unwrap();
            let total: usize = p.pixels.iter().map(Vec::len).sum();
            prop_assert_eq!(p.sizes.iter().sum::<usize>(), total);
            for (i, list) in p.pixels.iter().enumerate() {
                let row = &a.values[i * a.channels..(i + 1) * a.channels];
                prop_assert!(list.len() <= k);
                for pair in list.windows(2) {
                    prop_assert!(row[pair[0]] > row[pair[1]] || (row[pair[0]] == row[pair[1]] && pair[0] < pair[1]));
                }
                prop_assert!(list.iter().all(|&c| row[c] > 0.0));
                if list.len() < k {
                    prop_assert_eq!(list.len(), row.iter().filter(|&&v| v > 0.0).count());
                }
            }
            prop_assert!(p.ratios().iter().all(|&r| (0.0..=1.0).contains(&r)));
        }

        #[test]
        fn k1_parts_partition_the_positive_pixels(a in aggregates()) {
            let p = parts_topk(&a, 1).unwrap();
            let mut owners = vec![0usize; a.height * a.width];
            for c in 0..a.channels {
                for (y, x) in p.part(c) {
                    owners[y * a.width + x] += 1;
                }
            }
            for (i, row) in a.values.chunks_exact(a.channels).enumerate() {
                let positive = row.iter().any(|&v| v > 0.0);
                prop_assert_eq!(owners[i], usize::from(positive));
            }
        }

        #[test]
        fn saliency_equals_k1_winner_where_positive(a in aggregates()) {
            let s = saliency_map(&result(vec![a.clone()]), 0).unwrap();
            let p = parts_topk(&a, 1).unwrap();
            for (i, list) in p.pixels.iter().enumerate() {
                if let Some(&c) = list.first() {
                    prop_assert_eq!(s.raw[i], a.values[i * a.channels + c]);
                }
            }
        }

        #[test]
        fn saliency_ignores_channel_order(a in aggregates(), seed in any::<u64>()) {
            let mut perm: Vec<usize> = (0..a.channels).collect();
            let mut s = seed;
            for i in (1..perm.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let mut b = a.clone();
            for (row_b, row_a) in b.values.chunks_exact_mut(a.channels).zip(a.values.chunks_exact(a.channels)) {
                for (c, &p) in perm.iter().enumerate() {
                    row_b[c] = row_a[p];
                }
            }
            let sa = saliency_map(&result(vec![a]), 0).unwrap();
            let sb = saliency_map(&result(vec![b]), 0).unwrap();
            prop_assert_eq!(sa, sb);
        }

        #[test]
        fn distance_is_a_metric(
            a in proptest::collection::vec(0.0f64..1.0, 6),
            b in proptest::collection::vec(0.0f64..1.0, 6),
            c in proptest::collection::vec(0.0f64..1.0, 6),
        ) {
            let v = |x: &Vec<f64>| PortionHotVector { values: x.clone(), k: 3 };
            let (a, b, c) = (v(&a), v(&b), v(&c));
            let ab = l2_distance(&a, &b).unwrap();
            prop_assert_eq!(ab, l2_distance(&b, &a).unwrap());
            prop_assert!(l2_distance(&a, &c).unwrap() <= ab + l2_distance(&b, &c).unwrap() + 1e-12);
        }

        #[test]
        fn anova_is_shift_and_scale_invariant(
            groups in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 2..6), 2..5),
            shift in -100.0f64..100.0,
            scale in 0.1f64..10.0,
        ) {
            let base = anova_oneway(&groups, 0.05).unwrap();
            prop_assume!(base.ss_within > 1e-6);
            let moved: Vec<Vec<f64>> = groups.iter().map(|g| g.iter().map(|v| v * scale + shift).collect()).collect();
            let r = anova_oneway(&moved, 0.05).unwrap();
            prop_assert!(r.f >= 0.0);
            prop_assert!((r.f - base.f).abs() <= 1e-6 * base.f.max(1.0));
            prop_assert_eq!((r.df_between, r.df_within), (groups.len() - 1, groups.iter().map(Vec::len).sum::<usize>() - groups.len()));
        }

        #[test]
        fn centers_match_two_pass_mean(
            rows in proptest::collection::vec((proptest::collection::vec(0.0f64..1.0, 4), 0usize..3), 1..30),
        ) {
            let vectors: Vec<PortionHotVector> = rows.iter().map(|(v, _)| PortionHotVector { values: v.clone(), k: 3 }).collect();
            let labels: Vec<usize> = rows.iter().map(|(_, l)| *l).collect();
            let c = category_centers(&vectors, &labels).unwrap();
            for d in 0..4 {
                let mean = rows.iter().map(|(v, _)| v[d]).sum::<f64>() / rows.len() as f64;
                prop_assert!((c.global[d] - mean).abs() <= 1e-7);
                for (label, center) in &c.per_label {
                    let members: Vec<f64> = rows.iter().filter(|(_, l)| l == label).map(|(v, _)| v[d]).collect();
                    let m = members.iter().sum::<f64>() / members.len() as f64;
                    prop_assert!((center[d] - m).abs() <= 1e-7);
                }
            }
            let scalars = scalarize(&vectors, Scalarize::default()).unwrap();
            for (s, (v, _)) in scalars.iter().zip(&rows) {
                let mean: Vec<f64> = (0..4).map(|d| rows.iter().map(|(v, _)| v[d]).sum::<f64>() / rows.len() as f64).collect();
                let direct = v.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                prop_assert!((s - direct).abs() <= 1e-7);
            }
        }
    }

    #[test]
    fn scalarize_examples() {
        let v = |x: Vec<f64>| PortionHotVector { values: x, k: 3 };
        assert_eq!(scalarize(&vec![v(vec![0.3, 0.1]); 3], Scalarize::default()).unwrap(), vec![0.0; 3]);
        let s = scalarize(&[v(vec![0.0, 1.0]), v(vec![1.0, 0.0])], Scalarize::default()).unwrap();
        assert_eq!(s[0], s[1]);
    }
}
