//! Pipeline stages. Each stage reads its inputs from the run directory and
//! writes deterministic artifacts tagged with the config hash, the seed and
//! a format version.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gradcore::Checkpoint;
use projtrans::dataset::{build_dataset, load_dataset, set_dir_name, write_dataset_manifest, Dataset, Split, SplitSpec};
use projtrans::geometry::{make_test_trajectory, make_training_trajectory, Trajectory, TrajectoryLabel};
use projtrans::infer::{evaluate_generated, generate_test_views, load_generator, GeneratedView};
use projtrans::io::{read_projection_set, read_volume, write_file, write_projection_set, write_volume, Meta};
use projtrans::metrics::{metrics_csv, per_angle_csv, summarize, MetricsRecord};
use projtrans::phantom::{generate_cohort, subject_id};
use projtrans::projector::{default_step, project_trajectory, Channel, ProjectionImage, ProjectionSet};
use projtrans::train::{loss_log_csv, TrainSample, Trainer};

use crate::config::{RunConfig, RUN_FORMAT};
use crate::error::CliError;

pub const COHORT_MANIFEST: &str = "cohort.txt";
pub const LOSS_LOG: &str = "loss_log.csv";
pub const FINAL_CHECKPOINT: &str = "generator.ckpt";
pub const METRICS_CSV: &str = "metrics.csv";
pub const PER_ANGLE_CSV: &str = "per_angle.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

/// Stage directories under the run's output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &RunConfig) -> Self {
        Self { root: cfg.output_dir.clone() }
    }

    pub fn phantoms(&self) -> PathBuf {
        self.root.join("phantoms")
    }

    pub fn projections(&self) -> PathBuf {
        self.root.join("projections")
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn train(&self) -> PathBuf {
        self.root.join("train")
    }

    pub fn generated(&self) -> PathBuf {
        self.root.join("generated")
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn bench(&self) -> PathBuf {
        self.root.join("bench")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.train().join(FINAL_CHECKPOINT)
    }
}

/// Provenance tags embedded in every artifact.
pub fn run_meta(cfg: &RunConfig) -> Meta {
    let mut m = Meta::new();
    m.insert("config_hash".into(), cfg.hash());
    m.insert("format_version".into(), RUN_FORMAT.into());
    m.insert("seed".into(), cfg.seed.to_string());
    m
}

fn meta_comments(meta: &Meta) -> String {
    meta.iter().map(|(k, v)| format!("# meta.{k}={v}\n")).collect()
}

fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing(format!("{what} not found at {} (run the upstream stage first)", path.display())))
    }
}

fn volume_stem(dir: &Path, subject: &str, channel: Channel) -> PathBuf {
    let tag = match channel {
        Channel::Mr => "mr",
        Channel::Xray => "ct",
    };
    dir.join(format!("{subject}_{tag}"))
}

pub fn subject_ids(cfg: &RunConfig) -> Vec<String> {
    (0..cfg.phantom.subjects).map(subject_id).collect()
}

pub fn split_spec(cfg: &RunConfig) -> Result<SplitSpec, CliError> {
    Ok(SplitSpec::reserve_last(&subject_ids(cfg), cfg.dataset.test_subjects)?)
}

/// Synthesizes the cohort and writes paired CT/MR volumes plus a manifest.
pub fn cmd_phantom(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = Layout::new(cfg).phantoms();
    let meta = run_meta(cfg);
    let cohort = generate_cohort(cfg.phantom.subjects, &cfg.phantom_params()?, &cfg.truncation())?;
    let mut manifest = String::from("# format=projtrans-cohort-1\n");
    manifest.push_str(&meta_comments(&meta));
    manifest.push_str("subject_id,seed,truncate_axial_fraction,ct,mr\n");
    for m in &cohort {
        let mut vm = meta.clone();
        vm.insert("subject_id".into(), m.subject_id.clone());
        vm.insert("phantom_seed".into(), m.seed.to_string());
        let ct = volume_stem(&dir, &m.subject_id, Channel::Xray);
        let mr = volume_stem(&dir, &m.subject_id, Channel::Mr);
        write_volume(&ct, &m.ct, &vm)?;
        write_volume(&mr, &m.mr, &vm)?;
        let name = |p: &Path| p.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let _ = writeln!(manifest, "{},{},{},{},{}", m.subject_id, m.seed, m.truncate_axial_fraction, name(&ct), name(&mr));
    }
    write_file(&dir.join(COHORT_MANIFEST), manifest.as_bytes())?;
    Ok(dir)
}

fn trajectories(cfg: &RunConfig) -> Result<(Trajectory, Trajectory), CliError> {
    let t = &cfg.trajectory;
    Ok((
        make_training_trajectory(t.train_azimuths, t.train_inclinations, t.inclination_range_deg)?,
        make_test_trajectory(t.test_views)?,
    ))
}

/// Projects every subject along the training trajectory and the held-out
/// subjects along the test trajectory, in both channels.
pub fn cmd_project(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let layout = Layout::new(cfg);
    require(&layout.phantoms().join(COHORT_MANIFEST), "cohort manifest")?;
    let geom = cfg.geometry()?;
    let split = split_spec(cfg)?;
    let (train, test) = trajectories(cfg)?;
    let meta = run_meta(cfg);
    for subject in subject_ids(cfg) {
        for channel in [Channel::Mr, Channel::Xray] {
            let (vol, _) = read_volume(&volume_stem(&layout.phantoms(), &subject, channel))?;
            let step = if cfg.trajectory.step_mm > 0.0 { cfg.trajectory.step_mm } else { default_step(&vol) };
            let mut trajs = vec![&train];
            if split.of(&subject) == Some(Split::Test) {
                trajs.push(&test);
            }
            for traj in trajs {
                let set = project_trajectory(&vol, &geom, traj, step, &subject, channel)?;
                let dir = layout.projections().join(set_dir_name(&subject, channel, traj.label()));
                write_projection_set(&dir, &set, &meta)?;
            }
        }
    }
    Ok(layout.projections())
}

fn set_dir(layout: &Layout, subject: &str, channel: Channel, label: TrajectoryLabel) -> PathBuf {
    layout.projections().join(set_dir_name(subject, channel, label))
}

/// Pairs training-trajectory views of training subjects and test-trajectory
/// views of held-out subjects, normalizes and writes the dataset manifest.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let layout = Layout::new(cfg);
    let split = split_spec(cfg)?;
    let (mut mr, mut xray) = (Vec::new(), Vec::new());
    for subject in subject_ids(cfg) {
        let label = match split.of(&subject) {
            Some(Split::Test) => TrajectoryLabel::Test,
            _ => TrajectoryLabel::Train,
        };
        for (channel, sets) in [(Channel::Mr, &mut mr), (Channel::Xray, &mut xray)] {
            let dir = set_dir(&layout, &subject, channel, label);
            require(&dir, "projection set")?;
            sets.push(read_projection_set(&dir)?.0);
        }
    }
    let ds = build_dataset(&mr, &xray, &split, cfg.label_scope()?)?;
    write_dataset_manifest(&layout.dataset(), &ds, "../projections", &run_meta(cfg))?;
    Ok(layout.dataset())
}

pub fn load_prepared(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let dir = Layout::new(cfg).dataset();
    require(&dir.join(projtrans::dataset::DATASET_MANIFEST), "dataset manifest")?;
    Ok(load_dataset(&dir)?)
}

pub fn training_samples(ds: &Dataset) -> Result<Vec<TrainSample>, CliError> {
    ds.split(Split::Train)
        .map(|p| Ok(TrainSample::from_paired(p, *ds.label_stats_for(&p.subject_id)?)))
        .collect()
}

fn checkpoint_meta(cfg: &RunConfig, ds: &Dataset) -> Meta {
    let mut meta = run_meta(cfg);
    meta.insert("arch".into(), cfg.arch().map(|a| a.canonical()).unwrap_or_default());
    if let Some(g) = ds.global_label_stats() {
        meta.insert("label_mean".into(), g.mean.to_string());
        meta.insert("label_std".into(), g.std.to_string());
    }
    meta
}

fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> projtrans::Result<()> {
    write_file(path, &ckpt.to_bytes()?)
}

/// Trains the configured generator; writes the loss log, intermediate and
/// final checkpoints.
pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let layout = Layout::new(cfg);
    let ds = load_prepared(cfg)?;
    let samples = training_samples(&ds)?;
    let mut trainer = Trainer::new(&cfg.arch()?, &cfg.loss_config()?, &cfg.trainer_config()?)?;
    let meta = checkpoint_meta(cfg, &ds);
    let dir = layout.train();
    let result = trainer.run(&samples, &meta, |epoch, ckpt| save_checkpoint(&dir.join(format!("checkpoint_e{epoch:04}.ckpt")), ckpt));
    let log = match result {
        Ok(log) => log,
        Err(e @ projtrans::Error::NonFiniteLoss { .. }) => {
            write_file(&dir.join("failure.txt"), format!("{e}\n").as_bytes())?;
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    let mut csv = meta_comments(&run_meta(cfg));
    csv.push_str(&loss_log_csv(&log));
    write_file(&dir.join(LOSS_LOG), csv.as_bytes())?;
    save_checkpoint(&layout.checkpoint(), &trainer.checkpoint(&meta))?;
    Ok(dir)
}

fn load_trained(cfg: &RunConfig) -> Result<projtrans::model::Generator<f32>, CliError> {
    let path = Layout::new(cfg).checkpoint();
    require(&path, "checkpoint")?;
    let ckpt = Checkpoint::load(&path)?;
    Ok(load_generator(&ckpt, &cfg.arch()?)?)
}

/// Writes generated test views, in label units, as projection sets.
pub fn cmd_infer(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let layout = Layout::new(cfg);
    let ds = load_prepared(cfg)?;
    let generator = load_trained(cfg)?;
    let views = generate_test_views(&generator, &ds)?;
    let geom = cfg.geometry()?;
    let mut by_subject: BTreeMap<&str, Vec<&GeneratedView>> = BTreeMap::new();
    for v in &views {
        by_subject.entry(ds.samples[v.sample_index].subject_id.as_str()).or_default().push(v);
    }
    let mut meta = run_meta(cfg);
    meta.insert("kind".into(), "generated".into());
    for (subject, vs) in by_subject {
        let samples: Vec<_> = vs.iter().map(|v| &ds.samples[v.sample_index]).collect();
        let poses = samples.iter().map(|s| s.pose).collect();
        let trajectory = Trajectory::new(poses, samples[0].trajectory)?;
        let images = vs
            .iter()
            .zip(&samples)
            .map(|(v, s)| ProjectionImage::new(s.label_raw.rows, s.label_raw.cols, v.data.clone(), s.pose, geom.id()))
            .collect::<projtrans::Result<Vec<_>>>()?;
        let set = ProjectionSet { geometry: geom.clone(), trajectory, images, subject_id: subject.to_string(), channel: Channel::Xray };
        write_projection_set(&layout.generated().join(subject), &set, &meta)?;
    }
    Ok(layout.generated())
}

/// Reads generated sets back and matches them to the test samples.
fn load_generated(cfg: &RunConfig, ds: &Dataset) -> Result<Vec<GeneratedView>, CliError> {
    let layout = Layout::new(cfg);
    let mut out = Vec::new();
    for subject in ds.subjects(Split::Test) {
        let dir = layout.generated().join(&subject);
        require(&dir, "generated projections")?;
        let (set, _) = read_projection_set(&dir)?;
        let samples: Vec<usize> =
            (0..ds.samples.len()).filter(|&i| ds.samples[i].split == Split::Test && ds.samples[i].subject_id == subject).collect();
        if samples.len() != set.images.len() {
            return Err(CliError::Core(projtrans::Error::Pairing(format!(
                "subject {subject}: {} generated views for {} test views",
                set.images.len(),
                samples.len()
            ))));
        }
        for (i, img) in samples.into_iter().zip(set.images) {
            out.push(GeneratedView { sample_index: i, data: img.data });
        }
    }
    Ok(out)
}

pub fn eval_records(cfg: &RunConfig) -> Result<Vec<MetricsRecord>, CliError> {
    let ds = load_prepared(cfg)?;
    let views = load_generated(cfg, &ds)?;
    Ok(evaluate_generated(&ds, &views, &cfg.metric_options()?)?)
}

/// Metrics CSV, per-angle report and a plain summary.
pub fn cmd_eval(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = Layout::new(cfg).eval();
    let records = eval_records(cfg)?;
    let opts = cfg.metric_options()?;
    let meta = run_meta(cfg);
    write_file(&dir.join(METRICS_CSV), metrics_csv(&records, &opts, &meta)?.as_bytes())?;
    let mut per_angle = per_angle_csv(&records, &opts);
    per_angle.push_str(&meta_comments(&meta));
    write_file(&dir.join(PER_ANGLE_CSV), per_angle.as_bytes())?;
    let s = summarize(&records)?;
    let mut text = meta_comments(&meta);
    let _ = writeln!(text, "views={}", s.views);
    let _ = writeln!(text, "mae_percent={:.6} +- {:.6}", s.mae_percent.mean, s.mae_percent.std);
    let _ = writeln!(text, "ssim={:.6} +- {:.6}", s.ssim.mean, s.ssim.std);
    let _ = writeln!(text, "psnr_db={:.6} +- {:.6}", s.psnr_db.mean, s.psnr_db.std);
    write_file(&dir.join(SUMMARY_FILE), text.as_bytes())?;
    Ok(dir)
}

/// phantom → project → prepare → train → infer → eval.
pub fn run_all(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    cmd_phantom(cfg)?;
    cmd_project(cfg)?;
    cmd_prepare(cfg)?;
    cmd_train(cfg)?;
    cmd_infer(cfg)?;
    cmd_eval(cfg)
}
