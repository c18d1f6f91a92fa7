//! Checkpoint loading, deterministic inference and test-set evaluation.

use rayon::prelude::*;

use gradcore::Checkpoint;

use crate::dataset::{denormalize_values, Dataset, NormalizationStats, Split};
use crate::error::{arg, Result};
use crate::metrics::{evaluate_views, EvalView, MetricOptions, MetricsRecord};
use crate::model::{ArchConfig, Generator};
use crate::train::GEN_PREFIX;

/// Rebuilds a generator from a checkpoint written for `arch`.
pub fn load_generator(ckpt: &Checkpoint, arch: &ArchConfig) -> Result<Generator<f32>> {
    ckpt.expect_arch(&arch.hash())?;
    let mut generator = Generator::new(arch, 0)?;
    ckpt.load_store(GEN_PREFIX, &mut generator.params)?;
    Ok(generator)
}

/// Generated projection for a normalized MR view, optionally mapped back to
/// label units.
pub fn infer(
    generator: &Generator<f32>,
    input: &[f32],
    rows: usize,
    cols: usize,
    denormalize: Option<&NormalizationStats>,
) -> Result<Vec<f32>> {
    let out = generator.predict(input, rows, cols)?;
    Ok(match denormalize {
        Some(stats) => denormalize_values(&out, stats),
        None => out,
    })
}

/// One generated view of the test split, in label units.
#[derive(Clone, Debug)]
pub struct GeneratedView {
    pub sample_index: usize,
    pub data: Vec<f32>,
}

/// Runs the generator over every test sample in parallel.
pub fn generate_test_views(generator: &Generator<f32>, dataset: &Dataset) -> Result<Vec<GeneratedView>> {
    let indices: Vec<usize> = (0..dataset.samples.len()).filter(|&i| dataset.samples[i].split == Split::Test).collect();
    if indices.is_empty() {
        return arg("test split is empty");
    }
    indices
        .par_iter()
        .map(|&i| {
            let s = &dataset.samples[i];
            let stats = dataset.label_stats_for(&s.subject_id)?;
            let data = infer(generator, &s.input.data, s.input.rows, s.input.cols, Some(stats))?;
            Ok(GeneratedView { sample_index: i, data })
        })
        .collect()
}

/// Masked metrics of generated views against their raw labels.
pub fn evaluate_generated(dataset: &Dataset, views: &[GeneratedView], opts: &MetricOptions) -> Result<Vec<MetricsRecord>> {
    let eval: Vec<EvalView> = views
        .iter()
        .map(|v| {
            let s = &dataset.samples[v.sample_index];
            EvalView {
                subject_id: &s.subject_id,
                pose: s.pose,
                generated: &v.data,
                label: &s.label_raw.data,
                rows: s.label_raw.rows,
                cols: s.label_raw.cols,
            }
        })
        .collect();
    evaluate_views(&eval, opts)
}

/// One record per test view.
pub fn evaluate_set(generator: &Generator<f32>, dataset: &Dataset, opts: &MetricOptions) -> Result<Vec<MetricsRecord>> {
    let views = generate_test_views(generator, dataset)?;
    evaluate_generated(dataset, &views, opts)
}
