mod common;

use std::collections::BTreeMap;
use std::sync::OnceLock;

use gradcore::Checkpoint;
use projtrans::dataset::{Dataset, Split};
use projtrans::infer::{generate_test_views, infer, load_generator};
use projtrans::model::{ArchConfig, DiscriminatorConfig, FinalActivation};
use projtrans::objective::LossConfig;
use projtrans::train::{loss_log_csv, Trainer, TrainerConfig, TrainSample, LOSS_LOG_HEADER};
use projtrans::Error;

fn dataset() -> &'static Dataset {
    static DS: OnceLock<Dataset> = OnceLock::new();
    DS.get_or_init(|| common::toy_dataset(2, 1, 2, 3))
}

fn samples() -> Vec<TrainSample> {
    let ds = dataset();
    ds.split(Split::Train)
        .map(|p| TrainSample::from_paired(p, *ds.label_stats_for(&p.subject_id).unwrap()))
        .collect()
}

fn arch() -> ArchConfig {
    ArchConfig {
        levels: 2,
        channels: vec![8, 16],
        resblocks: vec![1, 1],
        outer_kernel: 7,
        kernel: 3,
        up_kernel: 4,
        final_activation: FinalActivation::Linear,
    }
}

fn trainer_config(seed: u64, iterations: usize) -> TrainerConfig {
    TrainerConfig {
        epochs: 10,
        max_iterations: Some(iterations),
        seed,
        checkpoint_every: 1,
        discriminator: DiscriminatorConfig { base_channels: 8, ..Default::default() },
        ..Default::default()
    }
}

fn train(seed: u64, iterations: usize) -> (Trainer, String, usize) {
    let mut t = Trainer::new(&arch(), &LossConfig::default(), &trainer_config(seed, iterations)).unwrap();
    let mut checkpoints = 0;
    let log = t.run(&samples(), &BTreeMap::new(), |_, _| {
        checkpoints += 1;
        Ok(())
    });
    (t, loss_log_csv(&log.unwrap()), checkpoints)
}

#[test]
fn training_is_deterministic_per_seed() {
    let (_, a, _) = train(5, 5);
    let (_, b, _) = train(5, 5);
    let (_, c, _) = train(6, 5);
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.starts_with(LOSS_LOG_HEADER));
    assert_eq!(a.lines().count(), 6);
}

#[test]
fn iteration_cap_and_checkpoint_schedule() {
    let (t, _, checkpoints) = train(1, 5);
    assert_eq!(t.iteration(), 5);
    // four pairs per epoch: only the first epoch completes before the cap
    assert_eq!(samples().len(), 4);
    assert_eq!(checkpoints, 1);
}

#[test]
fn feature_network_stays_frozen() {
    let before = Trainer::new(&arch(), &LossConfig::default(), &trainer_config(2, 3)).unwrap();
    let (after, _, _) = train(2, 3);
    for name in before.feature_net.params().names() {
        assert_eq!(before.feature_net.params().get(name), after.feature_net.params().get(name), "{name} moved");
    }
    let g0 = before.generator.params.get("out.weight").unwrap();
    assert_ne!(g0, after.generator.params.get("out.weight").unwrap());
}

#[test]
fn checkpoint_round_trip_reproduces_inference() {
    let (t, _, _) = train(3, 2);
    let bytes = t.checkpoint(&BTreeMap::new()).to_bytes().unwrap();
    let ck = Checkpoint::from_bytes(&bytes).unwrap();
    let g = load_generator(&ck, &arch()).unwrap();
    let s = &samples()[0];
    let a = infer(&t.generator, &s.input, s.rows, s.cols, None).unwrap();
    let b = infer(&g, &s.input, s.rows, s.cols, None).unwrap();
    assert_eq!(a, b);

    let mut other = arch();
    other.channels = vec![8, 8];
    assert!(load_generator(&ck, &other).is_err());
}

#[test]
fn test_set_inference_is_bit_identical() {
    let (t, _, _) = train(4, 2);
    let ds = dataset();
    let a = generate_test_views(&t.generator, ds).unwrap();
    let b = generate_test_views(&t.generator, ds).unwrap();
    assert_eq!(a.len(), ds.count(Split::Test));
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.sample_index, y.sample_index);
        assert!(x.data.iter().zip(&y.data).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn empty_split_and_nan_input_are_reported() {
    let mut t = Trainer::new(&arch(), &LossConfig::default(), &trainer_config(1, 3)).unwrap();
    assert!(t.run(&[], &BTreeMap::new(), |_, _| Ok(())).is_err());

    let mut bad = samples();
    for s in &mut bad {
        s.input[0] = f32::NAN;
    }
    match t.run(&bad, &BTreeMap::new(), |_, _| Ok(())) {
        Err(Error::NonFiniteLoss { iteration, .. }) => assert_eq!(iteration, 0),
        other => panic!("expected non-finite loss, got {other:?}"),
    }
}

#[test]
fn mismatched_feature_weights_are_rejected() {
    let loss = LossConfig { fm_stage_weights: vec![1.0; 3], ..Default::default() };
    assert!(Trainer::new(&arch(), &loss, &trainer_config(1, 1)).is_err());
}
