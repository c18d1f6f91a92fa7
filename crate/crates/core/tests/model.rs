use gradcore::{grad_check, Graph, Tensor};
use projtrans::model::{
    ArchConfig, Discriminator, DiscriminatorConfig, FeatureNet, FeatureNetConfig, FinalActivation, Generator,
    GeneratorPreset,
};
use proptest::prelude::*;

fn image(h: usize, w: usize, seed: u64) -> Vec<f32> {
    (0..h * w).map(|i| (((i as u64 * 2654435761 + seed) % 1000) as f32) / 500.0 - 1.0).collect()
}

fn tiny_arch(resblocks: Vec<usize>) -> ArchConfig {
    ArchConfig {
        levels: 2,
        channels: vec![3, 4],
        resblocks,
        outer_kernel: 3,
        kernel: 3,
        up_kernel: 4,
        final_activation: FinalActivation::Linear,
    }
}

#[test]
fn generator_preserves_shape_for_both_presets() {
    for preset in [GeneratorPreset::reference(), GeneratorPreset::proposed()] {
        let g = Generator::<f32>::new(&preset.arch, 3).unwrap();
        for (h, w) in [(64, 64), (32, 48)] {
            let out = g.predict(&image(h, w, 1), h, w).unwrap();
            assert_eq!(out.len(), h * w);
            assert!(out.iter().all(|v| v.is_finite()));
        }
        assert!(g.predict(&image(62, 64, 1), 62, 64).is_err());
    }
}

#[test]
fn zeroed_residual_block_is_identity() {
    let with = Generator::<f32>::new(&tiny_arch(vec![1, 0]), 5).unwrap();
    let mut with = with;
    for name in ["res0_0.conv2.weight", "res0_0.conv2.bias"] {
        let i = with.params.index_of(name).unwrap();
        with.params.value_mut(i).data_mut().fill(0.0);
    }
    let mut without = Generator::<f32>::new(&tiny_arch(vec![0, 0]), 99).unwrap();
    for i in 0..without.params.len() {
        let name = without.params.names()[i].clone();
        let src = with.params.get(&name).unwrap().clone();
        *without.params.value_mut(i) = src;
    }
    let x = image(16, 16, 4);
    assert_eq!(with.predict(&x, 16, 16).unwrap(), without.predict(&x, 16, 16).unwrap());
}

#[test]
fn composite_generator_gradients_match_finite_differences() {
    let gen = Generator::<f64>::new(&tiny_arch(vec![1, 1]), 11).unwrap();
    for seed in 0..3 {
        let report = grad_check(
            |g, v| {
                let params = gen.params.bind(g, false);
                Ok(gen.forward(g, &params, v[0]).unwrap())
            },
            &[vec![1, 1, 8, 8]],
            seed,
            1e-6,
            1e-5,
        )
        .unwrap();
        assert!(report.passed, "seed {seed}: {:.3e}", report.max_rel_error);
    }
}

#[test]
fn composite_parameter_gradients_match_finite_differences() {
    // residual block conv1 weight as the checked input
    let gen = Generator::<f64>::new(&tiny_arch(vec![1, 0]), 12).unwrap();
    let wi = gen.params.index_of("res0_0.conv1.weight").unwrap();
    let x = Tensor::new([1, 1, 8, 8], image(8, 8, 2).iter().map(|v| *v as f64).collect()).unwrap();
    let report = grad_check(
        |g, v| {
            let mut params = gen.params.bind(g, false);
            params[wi] = v[0];
            let xi = g.constant(x.clone());
            Ok(gen.forward(g, &params, xi).unwrap())
        },
        &[gen.params.value(wi).shape().to_vec()],
        7,
        1e-6,
        1e-5,
    )
    .unwrap();
    assert!(report.passed, "{:.3e}", report.max_rel_error);
}

#[test]
fn discriminator_logit_map_and_zero_weights() {
    let cfg = DiscriminatorConfig::default();
    let mut d = Discriminator::<f64>::new(&cfg, 1).unwrap();
    let mut g = Graph::new();
    let vars = d.params.bind(&mut g, false);
    let a = g.constant(Tensor::full([1, 1, 64, 64], 0.3));
    let b = g.constant(Tensor::new([1, 1, 64, 64], image(64, 64, 8).iter().map(|v| *v as f64).collect()).unwrap());
    let out = d.forward(&mut g, &vars, a, b).unwrap();
    assert_eq!(g.shape(out), &[1, 1, 6, 6]);
    let out2 = d.forward(&mut g, &vars, b, a).unwrap();
    assert_eq!(g.shape(out2), g.shape(out));
    let small = g.constant(Tensor::zeros([1, 1, 16, 16]));
    assert!(d.forward(&mut g, &vars, small, small).is_err());

    d.zero_all();
    let mut g = Graph::new();
    let vars = d.params.bind(&mut g, false);
    let a = g.constant(Tensor::full([1, 1, 64, 64], 0.3));
    let logits = d.forward(&mut g, &vars, a, a).unwrap();
    assert!(g.value(logits).data().iter().all(|v| *v == 0.0));
    let bce = g.bce_with_logits(logits, 1.0);
    let m = g.mean(bce);
    assert!((g.value(m).item() - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn discriminator_map_size_follows_arithmetic() {
    let cfg = DiscriminatorConfig { base_channels: 4, ..Default::default() };
    let d = Discriminator::<f32>::new(&cfg, 2).unwrap();
    for size in [24usize, 32, 40, 64, 72] {
        let mut g = Graph::new();
        let vars = d.params.bind(&mut g, false);
        let a = g.constant(Tensor::zeros([1, 1, size, size]));
        let out = d.forward(&mut g, &vars, a, a).unwrap();
        let n = cfg.output_size(size).unwrap();
        assert_eq!(g.shape(out), &[1, 1, n, n]);
    }
}

fn features(net: &FeatureNet<f32>, x: &[f32], h: usize, w: usize) -> Vec<Tensor<f32>> {
    let mut g = Graph::new();
    let vars = net.bind(&mut g);
    let xi = g.constant(Tensor::new([1, 1, h, w], x.to_vec()).unwrap());
    let maps = net.forward(&mut g, &vars, xi).unwrap();
    maps.into_iter().map(|m| g.value(m).clone()).collect()
}

#[test]
fn feature_net_stage_sizes_and_determinism() {
    let net = FeatureNet::<f32>::new(&FeatureNetConfig::default()).unwrap();
    let x = image(64, 64, 3);
    let a = features(&net, &x, 64, 64);
    let b = features(&net, &x, 64, 64);
    assert_eq!(a, b);
    for (s, m) in a.iter().enumerate() {
        let side = 64 >> (s + 1);
        assert_eq!(m.shape(), &[1, FeatureNetConfig::default().channels[s], side, side]);
    }
}

#[test]
fn feature_net_receptive_field() {
    let net = FeatureNet::<f32>::new(&FeatureNetConfig::default()).unwrap();
    let x: Vec<f32> = image(32, 32, 6).iter().map(|v| v.abs() + 0.1).collect();
    let mut y = x.clone();
    y[16 * 32 + 16] += 1.0;
    let a = features(&net, &x, 32, 32);
    let b = features(&net, &y, 32, 32);
    for (s, (ma, mb)) in a.iter().zip(&b).enumerate() {
        assert!(ma.data().iter().zip(mb.data()).any(|(p, q)| p != q), "stage {} unaffected", s + 1);
    }
}

#[test]
fn feature_net_loads_external_weights() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("feat.ckpt");
    let mut cfg = FeatureNetConfig { seed: 77, ..Default::default() };
    let source = FeatureNet::<f32>::new(&cfg).unwrap();
    let mut ck = gradcore::Checkpoint::new("features");
    ck.push_store(projtrans::model::FEATURE_PREFIX, source.params());
    ck.save(&path).unwrap();
    cfg.seed = 1;
    cfg.weights = projtrans::model::FeatureWeights::Loaded(path.display().to_string());
    let loaded = FeatureNet::<f32>::new(&cfg).unwrap();
    let x = image(32, 32, 1);
    assert_eq!(features(&loaded, &x, 32, 32), features(&source, &x, 32, 32));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generator_shape_contract(hm in 1usize..5, wm in 1usize..5, seed in 0u64..100) {
        let g = Generator::<f32>::new(&tiny_arch(vec![1, 1]), seed).unwrap();
        let (h, w) = (hm * 2, wm * 2);
        let out = g.predict(&image(h, w, seed), h, w).unwrap();
        prop_assert_eq!(out.len(), h * w);
        prop_assert!(g.predict(&image(h + 1, w, seed), h + 1, w).is_err());
    }
}
