//! Run configuration: one TOML document drives every stage, with dotted-path
//! overrides applied before validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use projtrans::dataset::StatsScope;
use projtrans::geometry::{BeamMode, ConeBeamGeometry};
use projtrans::metrics::{MaeBasis, MetricOptions, SsimRange};
use projtrans::model::{
    ArchConfig, DiscriminatorConfig, FeatureNetConfig, FeatureWeights, FinalActivation, GeneratorPreset, PresetName,
};
use projtrans::objective::LossConfig;
use projtrans::phantom::{HeadPhantomParams, TruncationSubset};
use projtrans::train::TrainerConfig;

use crate::error::CliError;

pub const RUN_FORMAT: &str = "projtrans-run-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub phantom: PhantomSection,
    pub geometry: GeometrySection,
    pub trajectory: TrajectorySection,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub loss: LossSection,
    pub trainer: TrainerSection,
    pub eval: EvalSection,
    pub bench: BenchSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSection {
    pub subjects: usize,
    pub dims: [usize; 3],
    pub spacing_mm: f64,
    pub skull_thickness_mm: f64,
    pub sinus_cavities: usize,
    pub vessels: usize,
    pub jitter: f64,
    pub truncate_axial_fraction: f64,
    /// Subject indices that receive axial truncation; empty means all.
    pub truncate_subjects: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySection {
    pub sad_mm: f64,
    pub sdd_mm: f64,
    pub det_rows: usize,
    pub det_cols: usize,
    pub det_spacing_mm: f64,
    pub beam_mode: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySection {
    pub train_azimuths: usize,
    pub train_inclinations: usize,
    pub inclination_range_deg: f64,
    pub test_views: usize,
    /// Ray-marching step; 0 selects half the smallest voxel spacing.
    pub step_mm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// The last `test_subjects` subjects are held out.
    pub test_subjects: usize,
    pub label_scope: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: String,
    /// Overrides of the preset layout; empty keeps the preset value.
    pub channels: Vec<usize>,
    pub resblocks: Vec<usize>,
    pub final_activation: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub edge_threshold: f64,
    pub baseline_weight: f64,
    pub edge_weighting: bool,
    pub binarize: bool,
    pub fm_stage_weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSection {
    pub epochs: usize,
    /// 0 means no cap beyond the epoch count.
    pub max_iterations: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub checkpoint_every: usize,
    pub disc_base_channels: usize,
    pub feature_stages: usize,
    pub feature_channels: Vec<usize>,
    pub feature_seed: u64,
    /// Checkpoint with `feat.`-prefixed tensors; empty keeps frozen random weights.
    pub feature_weights: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub mae_basis: String,
    pub ssim_range: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub size: usize,
    pub repetitions: usize,
    pub warmup: usize,
    pub projector_views: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("run"),
            phantom: PhantomSection::default(),
            geometry: GeometrySection::default(),
            trajectory: TrajectorySection::default(),
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            loss: LossSection::default(),
            trainer: TrainerSection::default(),
            eval: EvalSection::default(),
            bench: BenchSection::default(),
        }
    }
}

impl Default for PhantomSection {
    fn default() -> Self {
        let p = HeadPhantomParams::default();
        Self {
            subjects: 13,
            dims: p.dims,
            spacing_mm: p.spacing_mm[0],
            skull_thickness_mm: p.skull_thickness_mm,
            sinus_cavities: p.n_sinus_cavities,
            vessels: p.n_vessels,
            jitter: p.jitter,
            truncate_axial_fraction: 0.0,
            truncate_subjects: Vec::new(),
        }
    }
}

impl Default for GeometrySection {
    fn default() -> Self {
        let g = ConeBeamGeometry::default();
        Self {
            sad_mm: g.sad_mm,
            sdd_mm: g.sdd_mm,
            det_rows: g.det_rows,
            det_cols: g.det_cols,
            det_spacing_mm: g.det_spacing_mm,
            beam_mode: g.beam_mode.as_str().to_string(),
        }
    }
}

impl Default for TrajectorySection {
    fn default() -> Self {
        use projtrans::geometry::{TEST_VIEWS, TRAIN_AZIMUTHS, TRAIN_INCLINATIONS, TRAIN_INCLINATION_RANGE_DEG};
        Self {
            train_azimuths: TRAIN_AZIMUTHS,
            train_inclinations: TRAIN_INCLINATIONS,
            inclination_range_deg: TRAIN_INCLINATION_RANGE_DEG,
            test_views: TEST_VIEWS,
            step_mm: 0.0,
        }
    }
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { test_subjects: 2, label_scope: StatsScope::Global.as_str().to_string() }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: PresetName::Proposed.as_str().to_string(),
            channels: Vec::new(),
            resblocks: Vec::new(),
            final_activation: String::new(),
        }
    }
}

impl Default for LossSection {
    fn default() -> Self {
        let l = LossConfig::default();
        Self {
            edge_threshold: l.edge_threshold,
            baseline_weight: l.baseline_weight,
            edge_weighting: l.edge_weighting,
            binarize: l.binarize,
            fm_stage_weights: l.fm_stage_weights,
        }
    }
}

impl Default for TrainerSection {
    fn default() -> Self {
        let t = TrainerConfig::default();
        Self {
            epochs: t.epochs,
            max_iterations: 0,
            lr: t.adam.lr,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            checkpoint_every: t.checkpoint_every,
            disc_base_channels: t.discriminator.base_channels,
            feature_stages: t.feature_net.stages,
            feature_channels: t.feature_net.channels,
            feature_seed: t.feature_net.seed,
            feature_weights: String::new(),
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { mae_basis: "range".into(), ssim_range: "label".into() }
    }
}

impl Default for BenchSection {
    fn default() -> Self {
        Self { size: 256, repetitions: 100, warmup: 10, projector_views: 16 }
    }
}

/// Desk-scale preset: six 64³ phantoms, 64×64 detector, one training view
/// per subject and 200 iterations of the proposed generator.
pub const DEMO_CONFIG: &str = r#"
seed = 7
output_dir = "demo-run"

[phantom]
subjects = 6
dims = [64, 64, 64]
spacing_mm = 3.0

[geometry]
det_rows = 64
det_cols = 64
det_spacing_mm = 4.8

[trajectory]
train_azimuths = 1
train_inclinations = 1
inclination_range_deg = 0.0
test_views = 36

[dataset]
test_subjects = 2

[model]
preset = "proposed"

[trainer]
epochs = 50
max_iterations = 200
lr = 2e-4
checkpoint_every = 25
disc_base_channels = 32

[bench]
size = 64
repetitions = 20
warmup = 3
projector_views = 4
"#;

fn parse_value(raw: &str) -> toml::Value {
    // a bare word that is not valid TOML is taken as a string
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `a.b.c=value` to a TOML table, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("malformed key path {path:?}")));
    }
    let mut cur = table;
    for key in &keys[..keys.len() - 1] {
        let entry = cur.entry(key.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("{key} in {path} is not a section")))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, overrides)
    }

    pub fn demo(overrides: &[String]) -> Result<Self, CliError> {
        Self::from_toml(DEMO_CONFIG, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Hash of the canonical serialized configuration.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.phantom.subjects == 0 {
            return bad("phantom.subjects must be positive".into());
        }
        if self.dataset.test_subjects >= self.phantom.subjects {
            return bad(format!(
                "dataset.test_subjects ({}) must leave at least one training subject of {}",
                self.dataset.test_subjects, self.phantom.subjects
            ));
        }
        if let Some(i) = self.phantom.truncate_subjects.iter().find(|&&i| i >= self.phantom.subjects) {
            return bad(format!("phantom.truncate_subjects names subject {i} outside the cohort"));
        }
        if self.trajectory.step_mm < 0.0 || !self.trajectory.step_mm.is_finite() {
            return bad("trajectory.step_mm must be >= 0".into());
        }
        if self.bench.size == 0 || self.bench.repetitions == 0 {
            return bad("bench.size and bench.repetitions must be positive".into());
        }
        self.geometry()?;
        self.phantom_params()?;
        self.arch()?;
        self.loss_config()?.validate()?;
        self.trainer_config()?.validate()?;
        self.metric_options()?;
        self.label_scope()?;
        Ok(())
    }

    pub fn geometry(&self) -> Result<ConeBeamGeometry, CliError> {
        let g = &self.geometry;
        let geom = ConeBeamGeometry {
            sad_mm: g.sad_mm,
            sdd_mm: g.sdd_mm,
            det_rows: g.det_rows,
            det_cols: g.det_cols,
            det_spacing_mm: g.det_spacing_mm,
            beam_mode: g.beam_mode.parse::<BeamMode>()?,
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn phantom_params(&self) -> Result<HeadPhantomParams, CliError> {
        let p = &self.phantom;
        let params = HeadPhantomParams {
            seed: self.seed,
            dims: p.dims,
            spacing_mm: [p.spacing_mm; 3],
            skull_thickness_mm: p.skull_thickness_mm,
            n_sinus_cavities: p.sinus_cavities,
            n_vessels: p.vessels,
            jitter: p.jitter,
            truncate_axial_fraction: p.truncate_axial_fraction,
            ..Default::default()
        };
        params.validate()?;
        Ok(params)
    }

    pub fn truncation(&self) -> TruncationSubset {
        if self.phantom.truncate_subjects.is_empty() {
            TruncationSubset::All
        } else {
            TruncationSubset::Only(self.phantom.truncate_subjects.clone())
        }
    }

    pub fn arch(&self) -> Result<ArchConfig, CliError> {
        let m = &self.model;
        let mut arch = GeneratorPreset::by_name(m.preset.parse()?).arch;
        if !m.channels.is_empty() {
            arch.channels = m.channels.clone();
        }
        if !m.resblocks.is_empty() {
            arch.resblocks = m.resblocks.clone();
        }
        if !m.final_activation.is_empty() {
            arch.final_activation = m.final_activation.parse::<FinalActivation>()?;
        }
        arch.validate()?;
        Ok(arch)
    }

    pub fn loss_config(&self) -> Result<LossConfig, CliError> {
        let l = &self.loss;
        Ok(LossConfig {
            edge_threshold: l.edge_threshold,
            baseline_weight: l.baseline_weight,
            edge_weighting: l.edge_weighting,
            binarize: l.binarize,
            fm_stage_weights: l.fm_stage_weights.clone(),
        })
    }

    pub fn trainer_config(&self) -> Result<TrainerConfig, CliError> {
        let t = &self.trainer;
        let weights = if t.feature_weights.is_empty() {
            FeatureWeights::FrozenRandom
        } else {
            FeatureWeights::Loaded(t.feature_weights.clone())
        };
        Ok(TrainerConfig {
            epochs: t.epochs,
            max_iterations: (t.max_iterations > 0).then_some(t.max_iterations),
            adam: gradcore::AdamConfig { lr: t.lr, beta1: t.beta1, beta2: t.beta2, ..Default::default() },
            seed: self.seed,
            checkpoint_every: t.checkpoint_every,
            discriminator: DiscriminatorConfig { base_channels: t.disc_base_channels, ..Default::default() },
            feature_net: FeatureNetConfig {
                stages: t.feature_stages,
                channels: t.feature_channels.clone(),
                seed: t.feature_seed,
                weights,
            },
        })
    }

    pub fn metric_options(&self) -> Result<MetricOptions, CliError> {
        let mae_basis: MaeBasis = self.eval.mae_basis.parse()?;
        let ssim_range: SsimRange = self.eval.ssim_range.parse()?;
        Ok(MetricOptions { mae_basis, ssim_range })
    }

    pub fn label_scope(&self) -> Result<StatsScope, CliError> {
        Ok(self.dataset.label_scope.parse::<StatsScope>()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::from_toml(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn dotted_overrides() {
        let cfg = RunConfig::from_toml("", &["trainer.epochs=10".into(), "model.preset=reference".into()]).unwrap();
        assert_eq!(cfg.trainer.epochs, 10);
        assert_eq!(cfg.model.preset, "reference");
        assert!(RunConfig::from_toml("", &["trainer.nope=1".into()]).is_err());
        assert!(RunConfig::from_toml("", &["model.preset=unknown".into()]).is_err());
        assert!(RunConfig::from_toml("", &["epochs".into()]).is_err());
    }

    #[test]
    fn demo_config_is_valid() {
        let cfg = RunConfig::demo(&[]).unwrap();
        assert_eq!(cfg.phantom.subjects - cfg.dataset.test_subjects, 4);
        assert_eq!(cfg.trainer.max_iterations, 200);
        assert_ne!(cfg.hash(), RunConfig::default().hash());
    }
}
