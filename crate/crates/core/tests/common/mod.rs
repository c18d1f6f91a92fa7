#![allow(dead_code)]

use projtrans::dataset::{build_dataset, Dataset, SplitSpec, StatsScope};
use projtrans::geometry::{make_test_trajectory, make_training_trajectory, BeamMode, ConeBeamGeometry};
use projtrans::phantom::{generate_cohort, HeadPhantomParams, TruncationSubset};
use projtrans::projector::{default_step, project_trajectory, Channel};

/// Desk-scale paired dataset: 64³ phantoms at 3 mm seen by a 64×64 detector.
pub fn toy_dataset(n_train: usize, n_test: usize, train_views: usize, test_views: usize) -> Dataset {
    let base = HeadPhantomParams { dims: [64; 3], spacing_mm: [3.0; 3], seed: 11, ..Default::default() };
    let cohort = generate_cohort(n_train + n_test, &base, &TruncationSubset::All).unwrap();
    let geom = ConeBeamGeometry {
        det_rows: 64,
        det_cols: 64,
        det_spacing_mm: 4.8,
        beam_mode: BeamMode::Cone,
        ..Default::default()
    };
    let train = make_training_trajectory(train_views, 1, 0.0).unwrap();
    let test = make_test_trajectory(test_views).unwrap();
    let (mut mr, mut xr) = (Vec::new(), Vec::new());
    for (i, m) in cohort.iter().enumerate() {
        let traj = if i < n_train { &train } else { &test };
        mr.push(project_trajectory(&m.mr, &geom, traj, default_step(&m.mr), &m.subject_id, Channel::Mr).unwrap());
        xr.push(project_trajectory(&m.ct, &geom, traj, default_step(&m.ct), &m.subject_id, Channel::Xray).unwrap());
    }
    let ids: Vec<String> = cohort.iter().map(|m| m.subject_id.clone()).collect();
    let split = SplitSpec::reserve_last(&ids, n_test).unwrap();
    build_dataset(&mr, &xr, &split, StatsScope::Global).unwrap()
}
