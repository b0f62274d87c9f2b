use diffpath::analysis::{portion_hot, PortionHotVector};
use diffpath::data::transform::{build_transform_groups, group_distances, TransformKind};
use diffpath::data::Preprocess;
use diffpath::model::arch;
use diffpath::pathway::{build_diffusion_kernels, extract_pathways, PathwayOptions};
use diffpath::{LayerParams, Model, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn images(n: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| Tensor::from_fn(&[1, 6, 6], |_| rng.random_range(0.0..1.0))).collect()
}

fn biased_toy(seed: u64) -> Model {
    let mut model = Model::random(arch::toy(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    for i in 0..model.spec().layers().len() {
        if let LayerParams::Conv { bias, .. } | LayerParams::Linear { bias, .. } = model.params_mut(i) {
            bias.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.2));
        }
    }
    model
}

#[test]
fn constant_model_gives_empty_flagged_output() {
    let mut model = Model::random(arch::toy(), 0);
    let fc = model.spec().layer_index("fc").unwrap();
    if let LayerParams::Linear { weight, bias } = model.params_mut(fc) {
        weight.data_mut().fill(0.0);
        bias.data_mut().copy_from_slice(&[0.0, 1.0]);
    }
    let xs = images(8, 1);
    let labels = vec![1; 8];
    for kind in [TransformKind::Rotate, TransformKind::Occlude] {
        let b = build_transform_groups(&model, &xs, &labels, kind, 2, 0, &Preprocess::default()).unwrap();
        assert!(b.groups.is_empty());
        assert!(b.warning.is_some());
    }
}

#[test]
fn groups_replay_and_are_thread_independent() {
    let model = biased_toy(4);
    let xs = images(60, 2);
    let labels: Vec<usize> = xs.iter().map(|x| model.predict(x).unwrap()).collect();
    for kind in [TransformKind::Rotate, TransformKind::Occlude] {
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| build_transform_groups(&model, &xs, &labels, kind, 4, 5, &Preprocess::default()).unwrap())
        };
        let a = run(1);
        assert!(!a.groups.is_empty(), "{kind:?}: no group found");
        for g in &a.groups {
            let orig = &xs[g.original_index];
            assert_eq!(g.invariant_transform.apply(orig).unwrap(), g.invariant);
            assert_eq!(g.variant_transform.apply(orig).unwrap(), g.variant);
            assert_eq!(model.predict(&g.invariant).unwrap(), g.label);
            assert_eq!(model.predict(&g.variant).unwrap(), g.variant_prediction);
            assert_ne!(g.variant_prediction, g.label);
            assert_eq!(labels[g.target_index], g.variant_prediction);
        }
        assert_eq!(a, run(3));
    }
}

#[test]
fn six_distances_per_group() {
    let model = biased_toy(4);
    let xs = images(60, 2);
    let labels: Vec<usize> = xs.iter().map(|x| model.predict(x).unwrap()).collect();
    let b = build_transform_groups(&model, &xs, &labels, TransformKind::Rotate, 2, 5, &Preprocess::default()).unwrap();
    let kernels = build_diffusion_kernels(&model);
    let ph = |x: &Tensor| -> PortionHotVector {
        portion_hot(&extract_pathways(&model, &kernels, x, PathwayOptions::default()).unwrap(), 3).unwrap()
    };
    for g in &b.groups {
        let d = group_distances(&ph(&xs[g.original_index]), &ph(&g.invariant), &ph(&g.variant), &ph(&xs[g.target_index]))
            .unwrap();
        assert_eq!(d.len(), 6);
        assert!(d.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}
