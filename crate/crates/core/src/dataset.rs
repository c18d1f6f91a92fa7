//! Pairing of MR and X-ray projection sets, normalization and the
//! subject-level train/test split.
//!
//! MR inputs are standardized per subject. X-ray labels are standardized
//! with statistics of the training subjects only (global scope) unless the
//! per-subject scope is selected.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{arg, Error, Result};
use crate::geometry::{parse_kv, ConeBeamGeometry, TrajectoryLabel, ViewPose};
use crate::io::{read_f32le, read_projection_header, read_text, view_file_name, write_file, Meta};
use crate::projector::{Channel, ProjectionImage, ProjectionSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StatsScope {
    PerSubject,
    Global,
}

impl StatsScope {
    pub fn as_str(self) -> &'static str {
        match self {
            StatsScope::PerSubject => "per_subject",
            StatsScope::Global => "global",
        }
    }
}

impl std::str::FromStr for StatsScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_subject" => Ok(StatsScope::PerSubject),
            "global" => Ok(StatsScope::Global),
            other => arg(format!("unknown normalization scope {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizationStats {
    pub mean: f64,
    pub std: f64,
    pub scope: StatsScope,
}

impl NormalizationStats {
    pub fn identity(scope: StatsScope) -> Self {
        Self { mean: 0.0, std: 1.0, scope }
    }

    pub fn to_line(&self) -> String {
        format!("mean={}\nstd={}\nscope={}\n", self.mean, self.std, self.scope.as_str())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let map = parse_kv(text);
        let num = |k: &str| -> Result<f64> {
            map.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Argument(format!("stats key {k} missing or malformed")))
        };
        let scope = map.get("scope").ok_or_else(|| Error::Argument("stats scope missing".into()))?.parse()?;
        let stats = Self { mean: num("mean")?, std: num("std")?, scope };
        if !(stats.std > 0.0 && stats.std.is_finite() && stats.mean.is_finite()) {
            return arg("stats must have finite mean and positive std");
        }
        Ok(stats)
    }
}

/// Mean and population standard deviation over every pixel, accumulated in `f64`.
pub fn compute_stats<'a>(images: impl IntoIterator<Item = &'a [f32]>, scope: StatsScope) -> Result<NormalizationStats> {
    let images: Vec<&[f32]> = images.into_iter().collect();
    let n: usize = images.iter().map(|i| i.len()).sum();
    if n == 0 {
        return Err(Error::DegenerateData("no pixels to compute statistics from".into()));
    }
    let mean = images.iter().flat_map(|i| i.iter()).map(|v| *v as f64).sum::<f64>() / n as f64;
    let var = images.iter().flat_map(|i| i.iter()).map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::DegenerateData("all pixels are equal, standard deviation is zero".into()));
    }
    Ok(NormalizationStats { mean, std, scope })
}

pub fn normalize_values(values: &[f32], stats: &NormalizationStats) -> Vec<f32> {
    values.iter().map(|v| ((*v as f64 - stats.mean) / stats.std) as f32).collect()
}

pub fn denormalize_values(values: &[f32], stats: &NormalizationStats) -> Vec<f32> {
    values.iter().map(|v| (*v as f64 * stats.std + stats.mean) as f32).collect()
}

pub fn normalize(image: &ProjectionImage, stats: &NormalizationStats) -> ProjectionImage {
    ProjectionImage { data: normalize_values(&image.data, stats), ..image.clone() }
}

pub fn denormalize(image: &ProjectionImage, stats: &NormalizationStats) -> ProjectionImage {
    ProjectionImage { data: denormalize_values(&image.data, stats), ..image.clone() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => arg(format!("unknown split {other:?}")),
        }
    }
}

/// Subject-level partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl SplitSpec {
    /// Reserves the last `n_test` subjects (in the given order) for testing.
    pub fn reserve_last(subjects: &[String], n_test: usize) -> Result<Self> {
        if n_test >= subjects.len() {
            return Err(Error::Split(format!("cannot reserve {n_test} of {} subjects for testing", subjects.len())));
        }
        let cut = subjects.len() - n_test;
        Ok(Self { train: subjects[..cut].to_vec(), test: subjects[cut..].to_vec() })
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::Split("no training subjects".into()));
        }
        let train: BTreeSet<&String> = self.train.iter().collect();
        let test: BTreeSet<&String> = self.test.iter().collect();
        if train.len() != self.train.len() || test.len() != self.test.len() {
            return Err(Error::Split("duplicate subject id within a partition".into()));
        }
        if let Some(s) = train.intersection(&test).next() {
            return Err(Error::Split(format!("subject {s} is in both train and test partitions")));
        }
        Ok(())
    }

    pub fn of(&self, subject: &str) -> Option<Split> {
        if self.train.iter().any(|s| s == subject) {
            Some(Split::Train)
        } else if self.test.iter().any(|s| s == subject) {
            Some(Split::Test)
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub subject_id: String,
    pub pose_index: usize,
    pub pose: ViewPose,
    pub split: Split,
    pub trajectory: TrajectoryLabel,
    /// Normalized MR projection.
    pub input: ProjectionImage,
    /// Normalized X-ray projection.
    pub label: ProjectionImage,
    /// X-ray projection in line-integral units, used for masked metrics.
    pub label_raw: ProjectionImage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Ordered by (split, subject, trajectory, pose index).
    pub samples: Vec<PairedSample>,
    pub mr_stats: BTreeMap<String, NormalizationStats>,
    pub label_stats: BTreeMap<String, NormalizationStats>,
    pub label_scope: StatsScope,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &PairedSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn label_stats_for(&self, subject: &str) -> Result<&NormalizationStats> {
        self.label_stats.get(subject).ok_or_else(|| Error::Argument(format!("no label stats for subject {subject}")))
    }

    /// Global label statistics; in per-subject scope, `None`.
    pub fn global_label_stats(&self) -> Option<NormalizationStats> {
        match self.label_scope {
            StatsScope::Global => self.label_stats.values().next().copied(),
            StatsScope::PerSubject => None,
        }
    }

    pub fn subjects(&self, split: Split) -> Vec<String> {
        let set: BTreeSet<&String> = self.split(split).map(|s| &s.subject_id).collect();
        set.into_iter().cloned().collect()
    }
}

type SetKey = (String, TrajectoryLabel);

fn index_sets<'a>(sets: &'a [ProjectionSet], channel: Channel) -> Result<BTreeMap<SetKey, &'a ProjectionSet>> {
    let mut map = BTreeMap::new();
    for set in sets {
        if set.channel != channel {
            return Err(Error::Pairing(format!("{} set of subject {} passed as {}", set.channel.as_str(), set.subject_id, channel.as_str())));
        }
        set.validate()?;
        let key = (set.subject_id.clone(), set.trajectory.label());
        if map.insert(key, set).is_some() {
            return Err(Error::Pairing(format!("duplicate {} set for subject {}", channel.as_str(), set.subject_id)));
        }
    }
    Ok(map)
}

/// Pairs views by (subject, trajectory, pose index) and normalizes them.
pub fn build_dataset(
    mr_sets: &[ProjectionSet],
    xray_sets: &[ProjectionSet],
    split: &SplitSpec,
    label_scope: StatsScope,
) -> Result<Dataset> {
    split.validate()?;
    let mr = index_sets(mr_sets, Channel::Mr)?;
    let xray = index_sets(xray_sets, Channel::Xray)?;
    if let Some((s, t)) = xray.keys().find(|k| !mr.contains_key(*k)) {
        return Err(Error::Pairing(format!("x-ray {t} set of subject {s} has no MR counterpart")));
    }
    let mut pairs = Vec::with_capacity(mr.len());
    for (key, m) in &mr {
        let x = xray
            .get(key)
            .ok_or_else(|| Error::Pairing(format!("MR {} set of subject {} has no x-ray counterpart", key.1, key.0)))?;
        if m.trajectory != x.trajectory {
            return Err(Error::Pairing(format!("subject {}: MR and x-ray trajectories differ", key.0)));
        }
        if m.geometry.det_rows != x.geometry.det_rows || m.geometry.det_cols != x.geometry.det_cols {
            return Err(Error::Pairing(format!("subject {}: MR and x-ray image sizes differ", key.0)));
        }
        let which = split
            .of(&key.0)
            .ok_or_else(|| Error::Split(format!("subject {} is in neither partition", key.0)))?;
        pairs.push((which, *m, *x));
    }
    for s in split.train.iter().chain(&split.test) {
        if !pairs.iter().any(|(_, m, _)| &m.subject_id == s) {
            return Err(Error::Pairing(format!("subject {s} has no projection sets")));
        }
    }

    let mut mr_stats = BTreeMap::new();
    for subject in split.train.iter().chain(&split.test) {
        let images = pairs.iter().filter(|(_, m, _)| &m.subject_id == subject).flat_map(|(_, m, _)| m.images.iter());
        mr_stats.insert(subject.clone(), compute_stats(images.map(|i| i.data.as_slice()), StatsScope::PerSubject)?);
    }
    let mut label_stats = BTreeMap::new();
    match label_scope {
        StatsScope::Global => {
            let images = pairs.iter().filter(|(s, _, _)| *s == Split::Train).flat_map(|(_, _, x)| x.images.iter());
            let global = compute_stats(images.map(|i| i.data.as_slice()), StatsScope::Global)?;
            for subject in split.train.iter().chain(&split.test) {
                label_stats.insert(subject.clone(), global);
            }
        }
        StatsScope::PerSubject => {
            for subject in split.train.iter().chain(&split.test) {
                let images = pairs.iter().filter(|(_, _, x)| &x.subject_id == subject).flat_map(|(_, _, x)| x.images.iter());
                label_stats.insert(subject.clone(), compute_stats(images.map(|i| i.data.as_slice()), StatsScope::PerSubject)?);
            }
        }
    }

    pairs.sort_by(|a, b| (a.0, &a.1.subject_id, a.1.trajectory.label()).cmp(&(b.0, &b.1.subject_id, b.1.trajectory.label())));
    let mut samples = Vec::new();
    for (which, m, x) in pairs {
        let ms = &mr_stats[&m.subject_id];
        let ls = &label_stats[&m.subject_id];
        for (i, (mi, xi)) in m.images.iter().zip(&x.images).enumerate() {
            samples.push(PairedSample {
                subject_id: m.subject_id.clone(),
                pose_index: i,
                pose: mi.pose,
                split: which,
                trajectory: m.trajectory.label(),
                input: normalize(mi, ms),
                label: normalize(xi, ls),
                label_raw: xi.clone(),
            });
        }
    }
    Ok(Dataset { samples, mr_stats, label_stats, label_scope })
}

/// Directory of one projection set relative to the projection root.
pub fn set_dir_name(subject: &str, channel: Channel, trajectory: TrajectoryLabel) -> String {
    format!("{subject}/{}-{}", channel.as_str(), trajectory.as_str())
}

pub const DATASET_MANIFEST: &str = "dataset.txt";
pub const LABEL_STATS_FILE: &str = "label_stats.txt";

fn subject_stats_file(subject: &str) -> String {
    format!("stats/{subject}.txt")
}

/// Writes the pairing table plus per-subject MR stats and label stats into
/// `dir`. `proj_root` is the projection root as seen from `dir`.
pub fn write_dataset_manifest(dir: &Path, ds: &Dataset, proj_root: &str, meta: &Meta) -> Result<()> {
    let mut text = String::new();
    let _ = writeln!(text, "# format=projtrans-dataset-1");
    let _ = writeln!(text, "# label_scope={}", ds.label_scope.as_str());
    for (k, v) in meta {
        let _ = writeln!(text, "# meta.{k}={v}");
    }
    let _ = writeln!(text, "subject_id,pose_index,azimuth_deg,inclination_deg,input_path,label_path,split");
    for s in &ds.samples {
        let view = view_file_name(s.pose_index);
        let _ = writeln!(
            text,
            "{},{},{},{},{proj_root}/{}/{view},{proj_root}/{}/{view},{}",
            s.subject_id,
            s.pose_index,
            s.pose.azimuth_deg(),
            s.pose.inclination_deg(),
            set_dir_name(&s.subject_id, Channel::Mr, s.trajectory),
            set_dir_name(&s.subject_id, Channel::Xray, s.trajectory),
            s.split.as_str()
        );
    }
    write_file(&dir.join(DATASET_MANIFEST), text.as_bytes())?;
    for (subject, st) in &ds.mr_stats {
        write_file(&dir.join(subject_stats_file(subject)), st.to_line().as_bytes())?;
    }
    match ds.global_label_stats() {
        Some(g) => write_file(&dir.join(LABEL_STATS_FILE), g.to_line().as_bytes())?,
        None => {
            let mut all = String::new();
            for (subject, st) in &ds.label_stats {
                for line in st.to_line().lines() {
                    let _ = writeln!(all, "{subject}.{line}");
                }
            }
            write_file(&dir.join(LABEL_STATS_FILE), all.as_bytes())?;
        }
    }
    Ok(())
}

/// Reloads a dataset written by [`write_dataset_manifest`], normalizing
/// views with the stored statistics.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(DATASET_MANIFEST);
    let text = read_text(&path)?;
    let bad = |detail: String| Error::format("dataset manifest", &path, detail);
    let mut scope = None;
    let mut rows = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# label_scope=") {
            scope = Some(rest.trim().parse::<StatsScope>().map_err(|e| bad(e.to_string()))?);
        } else if !line.starts_with('#') && !line.starts_with("subject_id,") && !line.trim().is_empty() {
            rows.push(line);
        }
    }
    let label_scope = scope.ok_or_else(|| bad("label_scope missing".into()))?;

    let stats_text = read_text(&dir.join(LABEL_STATS_FILE))?;
    let mut per_subject_labels: BTreeMap<String, String> = BTreeMap::new();
    let global = match label_scope {
        StatsScope::Global => Some(NormalizationStats::parse(&stats_text).map_err(|e| bad(e.to_string()))?),
        StatsScope::PerSubject => {
            for line in stats_text.lines() {
                if let Some((subject, rest)) = line.split_once('.') {
                    let entry = per_subject_labels.entry(subject.to_string()).or_default();
                    entry.push_str(rest);
                    entry.push('\n');
                }
            }
            None
        }
    };

    let mut mr_stats = BTreeMap::new();
    let mut label_stats = BTreeMap::new();
    let mut samples = Vec::with_capacity(rows.len());
    let mut sizes = BTreeMap::new();
    for (n, row) in rows.iter().enumerate() {
        let cols: Vec<&str> = row.split(',').collect();
        let [subject, idx, az, inc, input_path, label_path, split] = cols.as_slice() else {
            return Err(bad(format!("row {n} has {} columns", cols.len())));
        };
        let subject = subject.to_string();
        if !mr_stats.contains_key(&subject) {
            let st = NormalizationStats::parse(&read_text(&dir.join(subject_stats_file(&subject)))?)?;
            mr_stats.insert(subject.clone(), st);
            let ls = match global {
                Some(g) => g,
                None => NormalizationStats::parse(
                    per_subject_labels.get(&subject).ok_or_else(|| bad(format!("no label stats for {subject}")))?,
                )?,
            };
            label_stats.insert(subject.clone(), ls);
        }
        let pose_index: usize = idx.parse().map_err(|_| bad(format!("row {n}: bad pose index")))?;
        let az: f64 = az.parse().map_err(|_| bad(format!("row {n}: bad azimuth")))?;
        let inc: f64 = inc.parse().map_err(|_| bad(format!("row {n}: bad inclination")))?;
        let pose = ViewPose::new(az, inc)?;
        let split: Split = split.parse().map_err(|e: Error| bad(e.to_string()))?;
        let trajectory = trajectory_of(input_path).ok_or_else(|| bad(format!("row {n}: cannot infer trajectory")))?;
        let input_raw = load_view(dir, input_path, pose, &mut sizes)?;
        let label_raw = load_view(dir, label_path, pose, &mut sizes)?;
        if input_raw.rows != label_raw.rows || input_raw.cols != label_raw.cols {
            return Err(Error::Pairing(format!("row {n}: input and label sizes differ")));
        }
        samples.push(PairedSample {
            input: normalize(&input_raw, &mr_stats[&subject]),
            label: normalize(&label_raw, &label_stats[&subject]),
            label_raw,
            subject_id: subject,
            pose_index,
            pose,
            split,
            trajectory,
        });
    }
    Ok(Dataset { samples, mr_stats, label_stats, label_scope })
}

fn trajectory_of(path: &str) -> Option<TrajectoryLabel> {
    let dir = Path::new(path).parent()?.file_name()?.to_str()?;
    dir.rsplit_once('-')?.1.parse().ok()
}

type GeometryCache = BTreeMap<PathBuf, ConeBeamGeometry>;

/// Loads one view, taking its size from the owning projection-set manifest.
fn load_view(dir: &Path, rel: &str, pose: ViewPose, cache: &mut GeometryCache) -> Result<ProjectionImage> {
    let path = dir.join(rel);
    let set_dir = path.parent().ok_or_else(|| Error::Argument(format!("bad view path {rel}")))?.to_path_buf();
    if !cache.contains_key(&set_dir) {
        let header = read_projection_header(&set_dir)?;
        cache.insert(set_dir.clone(), header.geometry);
    }
    let geom = &cache[&set_dir];
    let data = read_f32le(&path, geom.det_rows * geom.det_cols)?;
    ProjectionImage::new(geom.det_rows, geom.det_cols, data, pose, geom.id())
}
