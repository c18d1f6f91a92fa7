//! Alternating discriminator/generator optimization with batch size one.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use gradcore::{Adam, AdamConfig, Checkpoint, Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{denormalize_values, NormalizationStats, PairedSample};
use crate::error::{arg, Error, Result};
use crate::metrics::{masked_mae_percent, MaeBasis};
use crate::model::{ArchConfig, Discriminator, DiscriminatorConfig, FeatureNet, FeatureNetConfig, Generator};
use crate::objective::{
    discriminator_loss, feature_matching_loss, generator_gan_loss, label_weight_map, total_loss, LossConfig, WeightMap,
};

pub const GEN_PREFIX: &str = "gen.";
pub const DISC_PREFIX: &str = "disc.";
pub const LOSS_LOG_HEADER: &str = "iteration,epoch,loss_d,loss_g_gan,loss_g_fm,loss_total";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainerConfig {
    pub epochs: usize,
    /// Stops early once this many iterations ran, if set.
    pub max_iterations: Option<usize>,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Checkpoint cadence in epochs; 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
    pub discriminator: DiscriminatorConfig,
    pub feature_net: FeatureNetConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            max_iterations: None,
            adam: AdamConfig { lr: 1e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 },
            seed: 0,
            checkpoint_every: 50,
            discriminator: DiscriminatorConfig::default(),
            feature_net: FeatureNetConfig::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return arg("epochs must be positive");
        }
        if self.max_iterations == Some(0) {
            return arg("max_iterations must be positive");
        }
        self.adam.validate()?;
        self.discriminator.validate()?;
        self.feature_net.validate()
    }

    pub fn canonical(&self) -> String {
        let a = &self.adam;
        format!(
            "trainer;epochs={};max_iterations={};lr={};beta1={};beta2={};eps={};seed={};checkpoint_every={};{};{}",
            self.epochs,
            self.max_iterations.map_or("none".to_string(), |n| n.to_string()),
            a.lr,
            a.beta1,
            a.beta2,
            a.eps,
            self.seed,
            self.checkpoint_every,
            self.discriminator.canonical(),
            self.feature_net.canonical()
        )
    }
}

/// One normalized training pair with the data needed for masked evaluation.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub subject_id: String,
    pub rows: usize,
    pub cols: usize,
    pub input: Vec<f32>,
    pub label: Vec<f32>,
    pub label_raw: Vec<f32>,
    pub label_stats: NormalizationStats,
}

impl TrainSample {
    pub fn from_paired(p: &PairedSample, label_stats: NormalizationStats) -> Self {
        Self {
            subject_id: p.subject_id.clone(),
            rows: p.input.rows,
            cols: p.input.cols,
            input: p.input.data.clone(),
            label: p.label.data.clone(),
            label_raw: p.label_raw.data.clone(),
            label_stats,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub loss_d: f32,
    pub loss_g_gan: f32,
    pub loss_g_fm: f32,
    pub loss_total: f32,
}

pub fn loss_log_csv(records: &[LossRecord]) -> String {
    let mut out = format!("{LOSS_LOG_HEADER}\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.iteration, r.epoch, r.loss_d, r.loss_g_gan, r.loss_g_fm, r.loss_total
        );
    }
    out
}

pub struct Trainer {
    pub arch: ArchConfig,
    pub loss: LossConfig,
    pub config: TrainerConfig,
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub feature_net: FeatureNet<f32>,
    adam_g: Adam<f32>,
    adam_d: Adam<f32>,
    iteration: usize,
}

/// Distinct seed streams for the two networks and the sample order.
fn sub_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream)
}

impl Trainer {
    pub fn new(arch: &ArchConfig, loss: &LossConfig, config: &TrainerConfig) -> Result<Self> {
        config.validate()?;
        loss.validate()?;
        if loss.fm_stage_weights.len() != config.feature_net.stages {
            return arg(format!(
                "{} feature-matching weights for {} feature stages",
                loss.fm_stage_weights.len(),
                config.feature_net.stages
            ));
        }
        Ok(Self {
            arch: arch.clone(),
            loss: loss.clone(),
            config: config.clone(),
            generator: Generator::new(arch, sub_seed(config.seed, 1))?,
            discriminator: Discriminator::new(&config.discriminator, sub_seed(config.seed, 2))?,
            feature_net: FeatureNet::new(&config.feature_net)?,
            adam_g: Adam::new(config.adam)?,
            adam_d: Adam::new(config.adam)?,
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// One discriminator step followed by one generator step.
    pub fn step(&mut self, sample: &TrainSample, map: &WeightMap, epoch: usize) -> Result<LossRecord> {
        let shape = [1, 1, sample.rows, sample.cols];
        let mut g = Graph::new();
        let g_vars = self.generator.params.bind(&mut g, true);
        let input = g.constant(Tensor::new(shape, sample.input.clone())?);
        let label = g.constant(Tensor::new(shape, sample.label.clone())?);
        let fake = self.generator.forward(&mut g, &g_vars, input)?;

        let loss_d = {
            let mut gd = Graph::new();
            let d_vars = self.discriminator.params.bind(&mut gd, true);
            let input = gd.constant(Tensor::new(shape, sample.input.clone())?);
            let label = gd.constant(Tensor::new(shape, sample.label.clone())?);
            let fake = gd.constant(g.value(fake).clone());
            let loss = discriminator_loss(&mut gd, &self.discriminator, &d_vars, input, label, fake, Some(map))?;
            let value = gd.value(loss).item();
            self.check(value, epoch, "discriminator")?;
            gd.backward(loss)?;
            self.discriminator.params.accumulate_grads(&gd, &d_vars)?;
            self.adam_d.step(&mut self.discriminator.params)?;
            value
        };

        let d_vars = self.discriminator.params.bind(&mut g, false);
        let f_vars = self.feature_net.bind(&mut g);
        let gan = generator_gan_loss(&mut g, &self.discriminator, &d_vars, input, fake, Some(map))?;
        let fm = feature_matching_loss(&mut g, &self.feature_net, &f_vars, label, fake, Some(map), &self.loss.fm_stage_weights)?;
        let total = total_loss(&mut g, gan, fm)?;
        let (loss_g_gan, loss_g_fm, loss_total) = (g.value(gan).item(), g.value(fm).item(), g.value(total).item());
        self.check(loss_total, epoch, "generator")?;
        g.backward(total)?;
        self.generator.params.accumulate_grads(&g, &g_vars)?;
        self.adam_g.step(&mut self.generator.params)?;

        let record = LossRecord { iteration: self.iteration, epoch, loss_d, loss_g_gan, loss_g_fm, loss_total };
        self.iteration += 1;
        Ok(record)
    }

    fn check(&self, value: f32, epoch: usize, what: &str) -> Result<()> {
        if value.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteLoss { iteration: self.iteration, epoch, detail: format!("{what} loss is {value}") })
        }
    }

    /// Generator and discriminator snapshot tagged with the generator hash.
    pub fn checkpoint(&self, meta: &BTreeMap<String, String>) -> Checkpoint {
        let mut ck = Checkpoint::new(self.arch.hash());
        ck.meta = meta.clone();
        ck.meta.insert("iteration".into(), self.iteration.to_string());
        ck.meta.insert("seed".into(), self.config.seed.to_string());
        ck.push_store(GEN_PREFIX, &self.generator.params);
        ck.push_store(DISC_PREFIX, &self.discriminator.params);
        ck
    }

    /// Runs the full schedule. `on_checkpoint(epoch, ckpt)` fires every
    /// `checkpoint_every` epochs; the final state is returned to the caller.
    pub fn run(
        &mut self,
        samples: &[TrainSample],
        meta: &BTreeMap<String, String>,
        mut on_checkpoint: impl FnMut(usize, &Checkpoint) -> Result<()>,
    ) -> Result<Vec<LossRecord>> {
        if samples.is_empty() {
            return arg("training split is empty");
        }
        let maps = samples
            .iter()
            .map(|s| label_weight_map(&s.label, s.rows, s.cols, &self.loss))
            .collect::<Result<Vec<_>>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(self.config.seed, 3));
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut log = Vec::new();
        let limit = self.config.max_iterations.unwrap_or(usize::MAX);
        'epochs: for epoch in 0..self.config.epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                if self.iteration >= limit {
                    break 'epochs;
                }
                log.push(self.step(&samples[i], &maps[i], epoch)?);
            }
            let every = self.config.checkpoint_every;
            if every > 0 && (epoch + 1) % every == 0 && epoch + 1 < self.config.epochs {
                let mut m = meta.clone();
                m.insert("epoch".into(), (epoch + 1).to_string());
                on_checkpoint(epoch + 1, &self.checkpoint(&m))?;
            }
        }
        Ok(log)
    }
}

/// Mean masked MAE% of the generator over the given pairs, in label units.
pub fn mean_masked_mae(generator: &Generator<f32>, samples: &[TrainSample]) -> Result<f64> {
    if samples.is_empty() {
        return arg("no samples to evaluate");
    }
    let mut total = 0.0;
    for s in samples {
        let out = generator.predict(&s.input, s.rows, s.cols)?;
        let out = denormalize_values(&out, &s.label_stats);
        total += masked_mae_percent(&out, &s.label_raw, MaeBasis::Range)?;
    }
    Ok(total / samples.len() as f64)
}
