//! Masked MAE% and PSNR, SSIM, per-view records and per-angle reports.
//!
//! Masked metrics consider only pixels where the label is nonzero, which
//! excludes the air background of a projection. Inputs are expected in the
//! label's physical intensity domain (line integrals), not normalized.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{arg, Error, Result};
use crate::geometry::ViewPose;

/// PSNR reported for a zero-error prediction.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MaeBasis {
    /// Divide by the label's dynamic range over the mask.
    #[default]
    Range,
    /// Divide by the mean absolute label value over the mask.
    Mean,
}

impl MaeBasis {
    pub fn as_str(self) -> &'static str {
        match self {
            MaeBasis::Range => "range",
            MaeBasis::Mean => "mean",
        }
    }
}

impl std::str::FromStr for MaeBasis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "range" => Ok(MaeBasis::Range),
            "mean" => Ok(MaeBasis::Mean),
            other => arg(format!("unknown MAE basis {other:?}")),
        }
    }
}

/// Where the SSIM dynamic range comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SsimRange {
    /// `max(L) - min(L)` of the label alone.
    #[default]
    Label,
    /// Extremes over both images, which makes the index symmetric.
    Pair,
}

impl SsimRange {
    pub fn as_str(self) -> &'static str {
        match self {
            SsimRange::Label => "label",
            SsimRange::Pair => "pair",
        }
    }
}

impl std::str::FromStr for SsimRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "label" => Ok(SsimRange::Label),
            "pair" => Ok(SsimRange::Pair),
            other => arg(format!("unknown SSIM range source {other:?}")),
        }
    }
}

fn check_pair(g: &[f32], l: &[f32]) -> Result<()> {
    if g.len() != l.len() {
        return arg(format!("image sizes differ: {} vs {}", g.len(), l.len()));
    }
    Ok(())
}

fn masked<'a>(g: &'a [f32], l: &'a [f32]) -> impl Iterator<Item = (f64, f64)> + 'a {
    g.iter().zip(l).filter(|(_, l)| **l != 0.0).map(|(g, l)| (*g as f64, *l as f64))
}

fn empty_mask() -> Error {
    Error::EmptyMask("label has no nonzero pixel".into())
}

/// Mean absolute error over the nonzero-label mask, in percent of the
/// chosen basis. A constant masked label falls back to its magnitude.
pub fn masked_mae_percent(g: &[f32], l: &[f32], basis: MaeBasis) -> Result<f64> {
    check_pair(g, l)?;
    let (mut n, mut sum_abs, mut sum_l) = (0usize, 0.0f64, 0.0f64);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (gv, lv) in masked(g, l) {
        n += 1;
        sum_abs += (gv - lv).abs();
        sum_l += lv.abs();
        lo = lo.min(lv);
        hi = hi.max(lv);
    }
    if n == 0 {
        return Err(empty_mask());
    }
    let denom = match basis {
        MaeBasis::Range if hi > lo => hi - lo,
        MaeBasis::Range => hi.abs(),
        MaeBasis::Mean => sum_l / n as f64,
    };
    Ok(sum_abs / n as f64 / denom * 100.0)
}

/// `10 log10(peak² / MSE)` over the mask with `peak = max(L)` on the mask,
/// capped at [`PSNR_CAP_DB`].
pub fn masked_psnr(g: &[f32], l: &[f32]) -> Result<f64> {
    check_pair(g, l)?;
    let (mut n, mut sse, mut peak) = (0usize, 0.0f64, f64::NEG_INFINITY);
    for (gv, lv) in masked(g, l) {
        n += 1;
        sse += (gv - lv).powi(2);
        peak = peak.max(lv);
    }
    if n == 0 {
        return Err(empty_mask());
    }
    let mse = sse / n as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// Fraction of pixels where the label is nonzero.
pub fn mask_fraction(l: &[f32]) -> f64 {
    l.iter().filter(|v| **v != 0.0).count() as f64 / l.len().max(1) as f64
}

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w: [f64; SSIM_WINDOW] = std::array::from_fn(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Valid-mode separable filtering of a row-major image.
fn filter_valid(img: &[f64], rows: usize, cols: usize, w: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let k = SSIM_WINDOW;
    let oc = cols - k + 1;
    let or = rows - k + 1;
    let mut horiz = vec![0.0; rows * oc];
    for r in 0..rows {
        let src = &img[r * cols..(r + 1) * cols];
        for c in 0..oc {
            horiz[r * oc + c] = (0..k).map(|t| w[t] * src[c + t]).sum();
        }
    }
    let mut out = vec![0.0; or * oc];
    for r in 0..or {
        for c in 0..oc {
            out[r * oc + c] = (0..k).map(|t| w[t] * horiz[(r + t) * oc + c]).sum();
        }
    }
    out
}

pub fn ssim_range(g: &[f32], l: &[f32], source: SsimRange) -> f64 {
    let extent = |it: &mut dyn Iterator<Item = f32>| {
        it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v as f64), hi.max(v as f64)))
    };
    let (lo, hi) = match source {
        SsimRange::Label => extent(&mut l.iter().copied()),
        SsimRange::Pair => extent(&mut l.iter().chain(g).copied()),
    };
    let r = hi - lo;
    // flat images: any positive range gives the same index for equal inputs
    if r > 0.0 {
        r
    } else {
        1.0
    }
}

/// Mean SSIM over all fully-contained 11×11 Gaussian windows (σ = 1.5).
/// Computed over the full image, unmasked.
pub fn ssim(g: &[f32], l: &[f32], rows: usize, cols: usize, source: SsimRange) -> Result<f64> {
    check_pair(g, l)?;
    if g.len() != rows * cols {
        return arg(format!("image has {} pixels, expected {rows}x{cols}", g.len()));
    }
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return arg(format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {rows}x{cols}"));
    }
    let range = ssim_range(g, l, source);
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let w = gaussian_window();
    let x: Vec<f64> = g.iter().map(|v| *v as f64).collect();
    let y: Vec<f64> = l.iter().map(|v| *v as f64).collect();
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let mx = filter_valid(&x, rows, cols, &w);
    let my = filter_valid(&y, rows, cols, &w);
    let mxx = filter_valid(&prod(&x, &x), rows, cols, &w);
    let myy = filter_valid(&prod(&y, &y), rows, cols, &w);
    let mxy = filter_valid(&prod(&x, &y), rows, cols, &w);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = mxx[i] - ux * ux;
        let vy = myy[i] - uy * uy;
        let cxy = mxy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct MetricOptions {
    pub mae_basis: MaeBasis,
    pub ssim_range: SsimRange,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub subject_id: String,
    pub azimuth_deg: f64,
    pub inclination_deg: f64,
    pub mae_percent: f64,
    pub ssim: f64,
    pub psnr_db: f64,
    pub mask_fraction: f64,
}

/// One generated view `g` against its label `l`, both in label units.
pub fn evaluate_view(
    subject_id: &str,
    pose: &ViewPose,
    g: &[f32],
    l: &[f32],
    rows: usize,
    cols: usize,
    opts: &MetricOptions,
) -> Result<MetricsRecord> {
    Ok(MetricsRecord {
        subject_id: subject_id.to_string(),
        azimuth_deg: pose.azimuth_deg(),
        inclination_deg: pose.inclination_deg(),
        mae_percent: masked_mae_percent(g, l, opts.mae_basis)?,
        ssim: ssim(g, l, rows, cols, opts.ssim_range)?,
        psnr_db: masked_psnr(g, l)?,
        mask_fraction: mask_fraction(l),
    })
}

/// Generated/label pair for batch evaluation.
pub struct EvalView<'a> {
    pub subject_id: &'a str,
    pub pose: ViewPose,
    pub generated: &'a [f32],
    pub label: &'a [f32],
    pub rows: usize,
    pub cols: usize,
}

/// Evaluates views concurrently; records come back sorted by (subject, azimuth).
pub fn evaluate_views(views: &[EvalView<'_>], opts: &MetricOptions) -> Result<Vec<MetricsRecord>> {
    if views.is_empty() {
        return arg("no views to evaluate");
    }
    let mut records = views
        .par_iter()
        .map(|v| evaluate_view(v.subject_id, &v.pose, v.generated, v.label, v.rows, v.cols, opts))
        .collect::<Result<Vec<_>>>()?;
    sort_records(&mut records);
    Ok(records)
}

pub fn sort_records(records: &mut [MetricsRecord]) {
    records.sort_by(|a, b| {
        a.subject_id
            .cmp(&b.subject_id)
            .then(a.azimuth_deg.total_cmp(&b.azimuth_deg))
            .then(a.inclination_deg.total_cmp(&b.inclination_deg))
    });
}

/// Streaming mean and population standard deviation (Welford).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.m2 / self.n as f64).sqrt()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub views: usize,
    pub mae_percent: MeanStd,
    pub ssim: MeanStd,
    pub psnr_db: MeanStd,
}

pub fn summarize(records: &[MetricsRecord]) -> Result<Summary> {
    if records.is_empty() {
        return arg("cannot summarize an empty record list");
    }
    let (mut mae, mut ss, mut ps) = (Welford::default(), Welford::default(), Welford::default());
    for r in records {
        mae.push(r.mae_percent);
        ss.push(r.ssim);
        ps.push(r.psnr_db);
    }
    let ms = |w: Welford| MeanStd { mean: w.mean(), std: w.std() };
    Ok(Summary { views: records.len(), mae_percent: ms(mae), ssim: ms(ss), psnr_db: ms(ps) })
}

pub const ANGLE_CONVENTION: &str = "angle 0 deg = RAO 90 deg, angle 180 deg = LAO 90 deg";

fn report_notes(opts: &MetricOptions) -> String {
    format!(
        "# mae_basis={} (masked MAE divided by the label {} over nonzero-label pixels)\n\
         # psnr_peak=label max over nonzero-label pixels, zero error reported as {PSNR_CAP_DB} dB\n\
         # ssim=unmasked, gaussian {SSIM_WINDOW}x{SSIM_WINDOW} sigma {SSIM_SIGMA}, valid windows, dynamic range from {}\n",
        opts.mae_basis.as_str(),
        match opts.mae_basis {
            MaeBasis::Range => "dynamic range",
            MaeBasis::Mean => "mean magnitude",
        },
        opts.ssim_range.as_str()
    )
}

/// Per-view CSV followed by a `#`-prefixed summary block.
pub fn metrics_csv(records: &[MetricsRecord], opts: &MetricOptions, meta: &BTreeMap<String, String>) -> Result<String> {
    let summary = summarize(records)?;
    let mut out = String::new();
    out.push_str(&report_notes(opts));
    for (k, v) in meta {
        let _ = writeln!(out, "# meta.{k}={v}");
    }
    out.push_str("subject_id,azimuth_deg,inclination_deg,mae_percent,ssim,psnr_db,mask_fraction\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6}",
            r.subject_id, r.azimuth_deg, r.inclination_deg, r.mae_percent, r.ssim, r.psnr_db, r.mask_fraction
        );
    }
    let _ = writeln!(out, "# summary views={}", summary.views);
    let _ = writeln!(out, "# mae_percent mean={:.6} std={:.6}", summary.mae_percent.mean, summary.mae_percent.std);
    let _ = writeln!(out, "# ssim mean={:.6} std={:.6}", summary.ssim.mean, summary.ssim.std);
    let _ = writeln!(out, "# psnr_db mean={:.6} std={:.6}", summary.psnr_db.mean, summary.psnr_db.std);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AngleRow {
    pub angle_deg: f64,
    pub mae_percent: f64,
    pub ssim: f64,
    pub psnr_db: f64,
}

/// Averages records over subjects for each distinct azimuth. Opposing
/// angles stay separate rows.
pub fn per_angle_rows(records: &[MetricsRecord]) -> Vec<AngleRow> {
    let mut groups: BTreeMap<u64, (f64, Welford, Welford, Welford)> = BTreeMap::new();
    for r in records {
        // non-negative finite floats order like their bit patterns
        let e = groups.entry(r.azimuth_deg.to_bits()).or_insert((r.azimuth_deg, Welford::default(), Welford::default(), Welford::default()));
        e.1.push(r.mae_percent);
        e.2.push(r.ssim);
        e.3.push(r.psnr_db);
    }
    groups
        .into_values()
        .map(|(a, m, s, p)| AngleRow { angle_deg: a, mae_percent: m.mean(), ssim: s.mean(), psnr_db: p.mean() })
        .collect()
}

pub fn per_angle_csv(records: &[MetricsRecord], opts: &MetricOptions) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {ANGLE_CONVENTION}");
    out.push_str(&report_notes(opts));
    out.push_str("angle_deg,mae_percent,ssim,psnr_db\n");
    for r in per_angle_rows(records) {
        let _ = writeln!(out, "{},{:.6},{:.6},{:.6}", r.angle_deg, r.mae_percent, r.ssim, r.psnr_db);
    }
    out
}
