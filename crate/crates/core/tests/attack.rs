use diffpath::attack::{
    bilinear_resize, build_adversarial_groups, default_gradcam_layer, fgsm, grad_cam, input_gradient, AttackConfig,
};
use diffpath::model::arch;
use diffpath::tensor::softmax_cross_entropy;
use diffpath::{LayerParams, LayerSpec, Model, ModelSpec, Tensor};
use diffpath_oracles::{forward64, logits64_from, loss64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn image(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(0.0..1.0))
}

fn with_random_biases(mut model: Model, seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..model.spec().layers().len() {
        if let LayerParams::Conv { bias, .. } | LayerParams::Linear { bias, .. } = model.params_mut(i) {
            bias.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.2));
        }
    }
    model
}

#[test]
fn input_gradient_matches_central_differences() {
    for seed in 0..4 {
        let model = with_random_biases(Model::random(arch::toy(), seed), seed);
        let x = image(&[1, 6, 6], seed + 10);
        let g = input_gradient(&model, &x, 1).unwrap();
        // Small enough that no ReLU or pool decision flips within the step.
        let h = 1e-4f32;
        let mut diff = 0f64;
        let mut norm = 0f64;
        for i in 0..x.len() {
            let (mut plus, mut minus) = (x.clone(), x.clone());
            plus.data_mut()[i] += h;
            minus.data_mut()[i] -= h;
            let step = (plus.data()[i] - minus.data()[i]) as f64;
            let fd = (loss64(&model, &plus, 1) - loss64(&model, &minus, 1)) / step;
            diff += (fd - g.data()[i] as f64).powi(2);
            norm += fd * fd;
        }
        let rel = diff.sqrt() / norm.sqrt();
        assert!(rel <= 1e-3, "seed {seed}: rel err {rel:e}");
    }
}

#[test]
fn zero_weights_give_zero_gradient() {
    let mut model = Model::random(arch::toy(), 1);
    for i in 0..model.spec().layers().len() {
        if let LayerParams::Conv { weight, .. } | LayerParams::Linear { weight, .. } = model.params_mut(i) {
            weight.data_mut().fill(0.0);
        }
    }
    let g = input_gradient(&model, &image(&[1, 6, 6], 2), 0).unwrap();
    assert!(g.data().iter().all(|&v| v == 0.0));
}

#[test]
fn doubled_logit_weights_keep_gradient_well_formed() {
    let mut model = Model::random(arch::toy(), 3);
    let fc = model.spec().layer_index("fc").unwrap();
    if let LayerParams::Linear { weight, .. } = model.params_mut(fc) {
        weight.data_mut().iter_mut().for_each(|w| *w *= 2.0);
    }
    let g = input_gradient(&model, &image(&[1, 6, 6], 4), 1).unwrap();
    assert_eq!(g.shape(), &[1, 6, 6]);
    assert!(g.data().iter().all(|v| v.is_finite()));
}

#[test]
fn gradient_scales_with_upstream_loss() {
    let model = with_random_biases(Model::random(arch::toy(), 5), 5);
    let x = image(&[1, 6, 6], 6);
    let trace = model.forward_trace(&x).unwrap();
    let (_, gl) = softmax_cross_entropy(&trace.logits, 0).unwrap();
    let base = model.backward(&trace, &gl, 0).unwrap().input_grad.unwrap();
    let scaled = model.backward(&trace, &gl.map(|v| v * 4.0), 0).unwrap().input_grad.unwrap();
    for (b, s) in base.data().iter().zip(scaled.data()) {
        assert!((s - 4.0 * b).abs() <= 1e-6 * b.abs().max(1e-6));
    }
    assert_eq!(base, input_gradient(&model, &x, 0).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fgsm_stays_in_range_and_budget(seed in 0u64..500, eps in 0.0f32..0.5, label in 0usize..2) {
        let model = Model::random(arch::toy(), seed);
        let x = image(&[1, 6, 6], seed + 1);
        let cfg = AttackConfig { epsilon: eps, ..AttackConfig::default() };
        let adv = fgsm(&model, &x, label, &cfg).unwrap();
        for (a, o) in adv.data().iter().zip(x.data()) {
            prop_assert!((0.0..=1.0).contains(a));
            prop_assert!((a - o).abs() <= eps + 1e-6);
        }
    }
}

/// Model whose logits are a fixed bias: it predicts class 0 for everything.
fn constant_model() -> Model {
    let mut model = Model::random(arch::toy(), 0);
    let fc = model.spec().layer_index("fc").unwrap();
    if let LayerParams::Linear { weight, bias } = model.params_mut(fc) {
        weight.data_mut().fill(0.0);
        bias.data_mut().copy_from_slice(&[1.0, 0.0]);
    }
    model
}

fn toy_dataset(n: usize, seed: u64) -> (Vec<Tensor>, Vec<usize>) {
    let images = (0..n).map(|i| image(&[1, 6, 6], seed + i as u64)).collect();
    let labels = (0..n).map(|i| i % 2).collect();
    (images, labels)
}

#[test]
fn unflippable_model_yields_no_groups() {
    let (images, labels) = toy_dataset(6, 0);
    let build = build_adversarial_groups(&constant_model(), &images, &labels, 1, &AttackConfig::default(), 0).unwrap();
    assert!(build.groups.is_empty());
    assert!(build.warning.is_some());
}

#[test]
fn groups_satisfy_their_invariants_and_are_reproducible() {
    let model = with_random_biases(Model::random(arch::toy(), 11), 11);
    let (images, _) = toy_dataset(40, 100);
    // Label by the model itself so originals are correctly classified.
    let labels: Vec<usize> = images.iter().map(|x| model.predict(x).unwrap()).collect();
    let cfg = AttackConfig {
        epsilon: 0.05,
        ..AttackConfig::default()
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| build_adversarial_groups(&model, &images, &labels, 5, &cfg, 9).unwrap())
    };
    let a = run(1);
    assert!(!a.groups.is_empty(), "no adversarial group found");
    for g in &a.groups {
        assert_eq!(model.predict(&images[g.original_index]).unwrap(), g.label);
        assert_eq!(model.predict(&g.adversarial).unwrap(), g.adversarial_prediction);
        assert_ne!(g.adversarial_prediction, g.label);
        assert_eq!(labels[g.target_index], g.adversarial_prediction);
        let max = g
            .adversarial
            .data()
            .iter()
            .zip(images[g.original_index].data())
            .map(|(a, o)| (a - o).abs())
            .fold(0f32, f32::max);
        assert!(max <= g.epsilon + 1e-6);
    }
    assert_eq!(a, run(3));
    assert_eq!(a, run(1));
}

/// conv 1→1 (k=3), ReLU, then a linear read-out of every activation with
/// weight `w` into a single class.
fn one_map_model(w: f32) -> Model {
    let spec = ModelSpec::new(
        vec![
            LayerSpec::conv("conv", 1, 1, 3),
            LayerSpec::relu("relu"),
            LayerSpec::flatten("flat"),
            LayerSpec::linear("fc", 16, 1),
        ],
        [1, 4, 4],
        1,
    )
    .unwrap();
    let mut model = Model::random(spec, 1);
    if let LayerParams::Linear { weight, .. } = model.params_mut(3) {
        weight.data_mut().fill(w);
    }
    model
}

#[test]
fn unit_alpha_cam_is_the_activation() {
    let model = one_map_model(1.0);
    let x = image(&[1, 4, 4], 3);
    let cam = grad_cam(&model, &x, 0, 0).unwrap();
    assert_eq!(cam.alpha, vec![1.0]);
    let act = &model.forward_trace(&x).unwrap().outputs[1];
    assert_eq!(cam.cam.data(), act.data());
    let lo = act.data().iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let hi = act.data().iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    for (h, a) in cam.heatmap.data().iter().zip(act.data()) {
        assert!((*h as f64 - (*a as f64 - lo) / (hi - lo)).abs() < 1e-6);
    }
}

#[test]
fn negative_cam_gives_zero_heatmap() {
    let cam = grad_cam(&one_map_model(-1.0), &image(&[1, 4, 4], 4), 0, 0).unwrap();
    assert!(cam.heatmap.data().iter().all(|&v| v == 0.0));
}

#[test]
fn grad_cam_rejects_non_conv_layers() {
    let model = Model::random(arch::toy(), 0);
    assert!(grad_cam(&model, &image(&[1, 6, 6], 0), 0, 1).is_err());
    assert!(grad_cam(&model, &image(&[1, 6, 6], 0), 5, 0).is_err());
}

#[test]
fn grad_cam_weights_match_activation_perturbation() {
    for seed in 0..4 {
        let model = with_random_biases(Model::random(arch::tiny([3, 8, 8], 3).unwrap(), seed), seed);
        let x = image(&[3, 8, 8], seed + 50);
        let layer = model.spec().layer_index("conv2_1").unwrap();
        let class = 2;
        let cam = grad_cam(&model, &x, class, layer).unwrap();
        let act_layer = model.spec().activation_layer(layer);
        let act = &forward64(&model, &x)[act_layer];
        let shape = model.spec().output_shape(act_layer);
        let (c, plane) = (shape[0], shape[1] * shape[2]);
        let delta = 1e-4;
        for ch in 0..c {
            let shift = |d: f64| {
                let mut a = act.clone();
                a[ch * plane..(ch + 1) * plane].iter_mut().for_each(|v| *v += d);
                logits64_from(&model, act_layer + 1, a)[class]
            };
            let fd = (shift(delta) - shift(-delta)) / (2.0 * delta) / plane as f64;
            let a = cam.alpha[ch];
            let rel = (fd - a).abs() / a.abs().max(1e-3);
            assert!(rel <= 1e-2, "seed {seed} channel {ch}: alpha {a} vs fd {fd}");
        }
        assert!(cam.heatmap.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn default_layer_is_conv3_3() {
    let spec = arch::vgg16([3, 32, 32], 10).unwrap();
    assert_eq!(spec.layers()[default_gradcam_layer(&spec).unwrap()].name, "conv3_3");
    let tiny = arch::tiny([3, 8, 8], 2).unwrap();
    assert_eq!(tiny.layers()[default_gradcam_layer(&tiny).unwrap()].name, "conv2_2");
}

#[test]
fn bilinear_downsample_averages_pairs() {
    let up = bilinear_resize(&[0.0, 2.0, 4.0, 6.0], 1, 4, 1, 2);
    assert_eq!(up, vec![1.0, 5.0]);
}
