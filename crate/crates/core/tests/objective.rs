use gradcore::{Graph, Tensor, Var};
use projtrans::model::{Discriminator, DiscriminatorConfig};
use projtrans::objective::{
    discriminator_loss, feature_matching_from_maps, feature_matching_loss, generator_gan_loss, label_weight_map,
    make_weight_map, sobel_gradient_map, total_loss, LossConfig, WeightMap,
};
use projtrans::model::{FeatureNet, FeatureNetConfig};
use proptest::prelude::*;

const N: usize = 64;

fn img(seed: u64) -> Vec<f64> {
    (0..N * N)
        .map(|i| {
            let (r, c) = ((i / N) as f64, (i % N) as f64);
            let blob = if (r - 32.0).powi(2) + (c - 30.0).powi(2) < 300.0 { 1.0 } else { 0.0 };
            blob + 0.1 * ((i as u64 * 7 + seed * 13) % 17) as f64 / 17.0
        })
        .collect()
}

fn disc() -> Discriminator<f64> {
    Discriminator::new(&DiscriminatorConfig { base_channels: 4, ..Default::default() }, 3).unwrap()
}

struct Setup {
    g: Graph<f64>,
    d_vars: Vec<Var>,
    input: Var,
    label: Var,
    fake: Var,
}

fn setup(d: &Discriminator<f64>, trainable: bool) -> Setup {
    let mut g = Graph::new();
    let d_vars = d.params.bind(&mut g, trainable);
    let input = g.constant(Tensor::new([1, 1, N, N], img(1)).unwrap());
    let label = g.constant(Tensor::new([1, 1, N, N], img(2)).unwrap());
    let fake = g.constant(Tensor::new([1, 1, N, N], img(3)).unwrap());
    Setup { g, d_vars, input, label, fake }
}

fn label_map(cfg: &LossConfig) -> WeightMap {
    let l: Vec<f32> = img(2).iter().map(|v| *v as f32).collect();
    label_weight_map(&l, N, N, cfg).unwrap()
}

#[test]
fn weighting_off_is_bitwise_equal_to_unweighted_path() {
    let d = disc();
    let ones = label_map(&LossConfig { edge_weighting: false, ..Default::default() });
    assert!(ones.data.iter().all(|v| *v == 1.0));
    let mut s = setup(&d, false);
    let a = discriminator_loss(&mut s.g, &d, &s.d_vars, s.input, s.label, s.fake, Some(&ones)).unwrap();
    let b = discriminator_loss(&mut s.g, &d, &s.d_vars, s.input, s.label, s.fake, None).unwrap();
    assert_eq!(s.g.value(a).item().to_bits(), s.g.value(b).item().to_bits());
    let a = generator_gan_loss(&mut s.g, &d, &s.d_vars, s.input, s.fake, Some(&ones)).unwrap();
    let b = generator_gan_loss(&mut s.g, &d, &s.d_vars, s.input, s.fake, None).unwrap();
    assert_eq!(s.g.value(a).item().to_bits(), s.g.value(b).item().to_bits());
}

#[test]
fn zero_map_gives_zero_loss_and_zero_gradients() {
    let d = disc();
    let zero = label_map(&LossConfig::default()).scaled(0.0);
    let mut s = setup(&d, true);
    let loss = discriminator_loss(&mut s.g, &d, &s.d_vars, s.input, s.label, s.fake, Some(&zero)).unwrap();
    assert_eq!(s.g.value(loss).item(), 0.0);
    s.g.backward(loss).unwrap();
    for v in &s.d_vars {
        assert!(s.g.grad(*v).unwrap().iter().all(|x| *x == 0.0));
    }
    let mut s = setup(&d, true);
    let gan = generator_gan_loss(&mut s.g, &d, &s.d_vars, s.input, s.fake, Some(&zero)).unwrap();
    assert_eq!(s.g.value(gan).item(), 0.0);
}

#[test]
fn zero_logit_discriminator_closed_forms() {
    let mut d = disc();
    d.zero_all();
    let mut s = setup(&d, false);
    let dl = discriminator_loss(&mut s.g, &d, &s.d_vars, s.input, s.label, s.fake, None).unwrap();
    assert!((s.g.value(dl).item() - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    let ones = WeightMap::ones(N, N);
    let gl = generator_gan_loss(&mut s.g, &d, &s.d_vars, s.input, s.fake, Some(&ones)).unwrap();
    assert!((s.g.value(gl).item() - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn gan_loss_is_linear_in_the_map() {
    let d = disc();
    let map = label_map(&LossConfig::default());
    let mut s = setup(&d, false);
    let one = generator_gan_loss(&mut s.g, &d, &s.d_vars, s.input, s.fake, Some(&map)).unwrap();
    let two = generator_gan_loss(&mut s.g, &d, &s.d_vars, s.input, s.fake, Some(&map.scaled(2.0))).unwrap();
    let (a, b) = (s.g.value(one).item(), s.g.value(two).item());
    assert!((b - 2.0 * a).abs() <= 1e-12 * b.abs());
}

#[test]
fn identity_feature_matching_is_mean_absolute_difference() {
    let mut g = Graph::<f64>::new();
    let l = g.constant(Tensor::new([1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let x = g.constant(Tensor::new([1, 1, 2, 3], vec![1.5, 2.0, 1.0, 4.0, 8.0, 6.0]).unwrap());
    let fm = feature_matching_from_maps(&mut g, &[l], &[x], Some(&WeightMap::ones(2, 3)), &[1.0]).unwrap();
    assert!((g.value(fm).item() - 5.5 / 6.0).abs() < 1e-15);
    let same = feature_matching_from_maps(&mut g, &[l], &[l], None, &[1.0]).unwrap();
    assert_eq!(g.value(same).item(), 0.0);
    let zero = feature_matching_from_maps(&mut g, &[l], &[x], Some(&WeightMap::ones(2, 3).scaled(0.0)), &[1.0]).unwrap();
    assert_eq!(g.value(zero).item(), 0.0);
    assert!(feature_matching_from_maps(&mut g, &[l], &[x], None, &[1.0, 1.0]).is_err());
}

#[test]
fn total_loss_with_zero_map_vanishes() {
    let d = disc();
    let net = FeatureNet::<f64>::new(&FeatureNetConfig::default()).unwrap();
    let zero = WeightMap::ones(N, N).scaled(0.0);
    let mut s = setup(&d, false);
    let f_vars = net.bind(&mut s.g);
    let gan = generator_gan_loss(&mut s.g, &d, &s.d_vars, s.input, s.fake, Some(&zero)).unwrap();
    let fm = feature_matching_loss(&mut s.g, &net, &f_vars, s.label, s.fake, Some(&zero), &[1.0; 4]).unwrap();
    let t = total_loss(&mut s.g, gan, fm).unwrap();
    assert_eq!(s.g.value(t).item(), 0.0);
}

#[test]
fn weight_map_is_finite_nonnegative_and_label_only() {
    let l: Vec<f32> = img(2).iter().map(|v| *v as f32).collect();
    let grad = sobel_gradient_map(&l, N, N).unwrap();
    let map = make_weight_map(&grad, N, N, &LossConfig::default());
    assert!(map.data.iter().all(|v| v.is_finite() && *v >= 0.0));
    let frac = map.edge_fraction(&grad);
    assert!(frac > 0.0 && frac < 0.5, "edge fraction {frac}");
    // literal-zero baseline: support limited to edge pixels
    let strict = make_weight_map(&grad, N, N, &LossConfig { baseline_weight: 0.0, ..Default::default() });
    let support = strict.data.iter().filter(|v| **v > 0.0).count() as f64 / (N * N) as f64;
    assert!((support - frac).abs() < 1e-12);
    assert!(map.to_pgm().starts_with(b"P5\n64 64\n65535\n"));
}

fn fm_value(map: &WeightMap, gen_seed: u64) -> f64 {
    let net = FeatureNet::<f64>::new(&FeatureNetConfig::default()).unwrap();
    let mut g = Graph::new();
    let vars = net.bind(&mut g);
    let l = g.constant(Tensor::new([1, 1, N, N], img(2)).unwrap());
    let x = g.constant(Tensor::new([1, 1, N, N], img(gen_seed)).unwrap());
    let fm = feature_matching_loss(&mut g, &net, &vars, l, x, Some(map), &[1.0; 4]).unwrap();
    g.value(fm).item()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn increasing_the_map_never_decreases_feature_matching(bump in 0.0f32..2.0, seed in 3u64..50) {
        let base = label_map(&LossConfig::default());
        let mut bigger = base.clone();
        bigger.data.iter_mut().enumerate().for_each(|(i, v)| if i % 3 == 0 { *v += bump });
        let (a, b) = (fm_value(&base, seed), fm_value(&bigger, seed));
        prop_assert!(a >= 0.0 && b + 1e-12 >= a);
    }

    #[test]
    fn feature_matching_of_identical_images_is_zero(seed in 0u64..50) {
        let net = FeatureNet::<f64>::new(&FeatureNetConfig::default()).unwrap();
        let mut g = Graph::new();
        let vars = net.bind(&mut g);
        let x = g.constant(Tensor::new([1, 1, 32, 32], img(seed)[..1024].to_vec()).unwrap());
        let fm = feature_matching_loss(&mut g, &net, &vars, x, x, None, &[1.0; 4]).unwrap();
        prop_assert_eq!(g.value(fm).item(), 0.0);
    }
}
