//! Edge-weighted adversarial objective: Sobel edge maps of the label,
//! thresholded weight maps resized to each loss term's grid, the patch GAN
//! terms and per-stage feature matching.

use gradcore::{bilinear_resize, Graph, Real, Var};

use crate::error::{arg, Result};
use crate::io::pgm16_bytes;
use crate::model::{Discriminator, FeatureNet};

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub edge_threshold: f64,
    /// Weight of pixels below the threshold; 0 discards them entirely.
    pub baseline_weight: f64,
    pub edge_weighting: bool,
    /// Use 1 above the threshold instead of the gradient magnitude.
    pub binarize: bool,
    pub fm_stage_weights: Vec<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            edge_threshold: 0.4,
            baseline_weight: 0.1,
            edge_weighting: true,
            binarize: false,
            fm_stage_weights: vec![1.0; 4],
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.edge_threshold) {
            return arg(format!("edge_threshold must lie in [0,1], got {}", self.edge_threshold));
        }
        if !(self.baseline_weight >= 0.0 && self.baseline_weight.is_finite()) {
            return arg(format!("baseline_weight must be finite and >= 0, got {}", self.baseline_weight));
        }
        if self.fm_stage_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return arg("feature-matching stage weights must be finite and >= 0");
        }
        Ok(())
    }

    pub fn canonical(&self) -> String {
        let w = self.fm_stage_weights.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "loss;threshold={};baseline={};edge_weighting={};binarize={};fm={w}",
            self.edge_threshold, self.baseline_weight, self.edge_weighting, self.binarize
        )
    }
}

/// Per-pixel loss weights derived from a label image.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMap {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
    pub threshold: f64,
    pub baseline_weight: f64,
}

impl WeightMap {
    pub fn ones(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![1.0; rows * cols], threshold: 0.0, baseline_weight: 1.0 }
    }

    pub fn scaled(&self, s: f32) -> Self {
        Self { data: self.data.iter().map(|v| v * s).collect(), ..self.clone() }
    }

    /// Fraction of pixels at or above the threshold.
    pub fn edge_fraction(&self, grad: &[f32]) -> f64 {
        let n = grad.iter().filter(|g| **g as f64 >= self.threshold).count();
        n as f64 / grad.len().max(1) as f64
    }

    /// 16-bit graymap, min-max scaled.
    pub fn to_pgm(&self) -> Vec<u8> {
        pgm16_bytes(self.rows, self.cols, &self.data)
    }

    fn as_real<T: Real>(&self) -> Vec<T> {
        self.data.iter().map(|v| T::lit(*v as f64)).collect()
    }
}

/// Sobel gradient magnitude with replicate padding, normalized by its maximum.
pub fn sobel_gradient_map(img: &[f32], rows: usize, cols: usize) -> Result<Vec<f32>> {
    let raw = sobel_magnitude(img, rows, cols)?;
    let max = raw.iter().copied().fold(0.0f64, f64::max);
    Ok(raw.iter().map(|v| if max > 0.0 { (v / max) as f32 } else { 0.0 }).collect())
}

/// Unnormalized Sobel magnitude.
pub fn sobel_magnitude(img: &[f32], rows: usize, cols: usize) -> Result<Vec<f64>> {
    if rows < 3 || cols < 3 {
        return arg(format!("Sobel needs at least 3x3, got {rows}x{cols}"));
    }
    if img.len() != rows * cols {
        return arg(format!("image has {} values, expected {rows}x{cols}", img.len()));
    }
    let at = |r: isize, c: isize| {
        let r = r.clamp(0, rows as isize - 1) as usize;
        let c = c.clamp(0, cols as isize - 1) as usize;
        img[r * cols + c] as f64
    };
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows as isize {
        for c in 0..cols as isize {
            let gx = (at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r, c - 1) + at(r + 1, c - 1));
            let gy = (at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r - 1, c) + at(r - 1, c + 1));
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    Ok(out)
}

pub fn make_weight_map(grad: &[f32], rows: usize, cols: usize, config: &LossConfig) -> WeightMap {
    if !config.edge_weighting {
        return WeightMap::ones(rows, cols);
    }
    let base = config.baseline_weight as f32;
    let data = grad
        .iter()
        .map(|&g| match (g as f64 >= config.edge_threshold, config.binarize) {
            (true, true) => 1.0,
            (true, false) => g,
            (false, _) => base,
        })
        .collect();
    WeightMap { rows, cols, data, threshold: config.edge_threshold, baseline_weight: config.baseline_weight }
}

/// Weight map of a label image.
pub fn label_weight_map(label: &[f32], rows: usize, cols: usize, config: &LossConfig) -> Result<WeightMap> {
    if !config.edge_weighting {
        return Ok(WeightMap::ones(rows, cols));
    }
    let grad = sobel_gradient_map(label, rows, cols)?;
    Ok(make_weight_map(&grad, rows, cols, config))
}

pub fn resize_weight_map(map: &WeightMap, rows: usize, cols: usize) -> Result<WeightMap> {
    let data = if (rows, cols) == (map.rows, map.cols) {
        map.data.clone()
    } else {
        bilinear_resize(&map.data, map.rows, map.cols, rows, cols)?.into_iter().map(|v| v.max(0.0)).collect()
    };
    Ok(WeightMap { rows, cols, data, ..map.clone() })
}

/// `mean(E ⊙ x)` with `E` resized to the spatial grid of `x`; `None` skips
/// the multiplication.
fn weighted_mean<T: Real>(g: &mut Graph<T>, x: Var, map: Option<&WeightMap>) -> Result<Var> {
    let x = match map {
        Some(m) => {
            let [_, _, h, w] = g.value(x).nchw()?;
            let resized = resize_weight_map(m, h, w)?;
            g.mul_map(x, &resized.as_real::<T>())?
        }
        None => x,
    };
    Ok(g.mean(x))
}

/// `mean(E·bce(D(I,L),1)) + mean(E·bce(D(I,G),0))`. `fake` must not carry
/// generator gradients.
#[allow(clippy::too_many_arguments)]
pub fn discriminator_loss<T: Real>(
    g: &mut Graph<T>,
    d: &Discriminator<T>,
    d_vars: &[Var],
    input: Var,
    label: Var,
    fake: Var,
    map: Option<&WeightMap>,
) -> Result<Var> {
    let real_logits = d.forward(g, d_vars, input, label)?;
    let fake_logits = d.forward(g, d_vars, input, fake)?;
    let real = g.bce_with_logits(real_logits, T::one());
    let fake = g.bce_with_logits(fake_logits, T::zero());
    let real = weighted_mean(g, real, map)?;
    let fake = weighted_mean(g, fake, map)?;
    Ok(g.add(real, fake)?)
}

/// Non-saturating generator term `mean(E·bce(D(I,G),1))`.
pub fn generator_gan_loss<T: Real>(
    g: &mut Graph<T>,
    d: &Discriminator<T>,
    d_vars: &[Var],
    input: Var,
    generated: Var,
    map: Option<&WeightMap>,
) -> Result<Var> {
    let logits = d.forward(g, d_vars, input, generated)?;
    let bce = g.bce_with_logits(logits, T::one());
    weighted_mean(g, bce, map)
}

/// `Σ_s w_s · mean(E_s ⊙ |V_s(L) − V_s(G)|)` over precomputed activations.
pub fn feature_matching_from_maps<T: Real>(
    g: &mut Graph<T>,
    label_feats: &[Var],
    gen_feats: &[Var],
    map: Option<&WeightMap>,
    stage_weights: &[f64],
) -> Result<Var> {
    if label_feats.len() != gen_feats.len() || label_feats.is_empty() {
        return arg(format!("{} label stages vs {} generated stages", label_feats.len(), gen_feats.len()));
    }
    if stage_weights.len() != label_feats.len() {
        return arg(format!("{} stage weights for {} stages", stage_weights.len(), label_feats.len()));
    }
    let mut total: Option<Var> = None;
    for ((&l, &x), &w) in label_feats.iter().zip(gen_feats).zip(stage_weights) {
        let diff = g.abs_diff(l, x)?;
        let term = weighted_mean(g, diff, map)?;
        let term = if w == 1.0 { term } else { g.scale(term, T::lit(w)) };
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    Ok(total.expect("at least one stage"))
}

pub fn feature_matching_loss<T: Real>(
    g: &mut Graph<T>,
    net: &FeatureNet<T>,
    net_vars: &[Var],
    label: Var,
    generated: Var,
    map: Option<&WeightMap>,
    stage_weights: &[f64],
) -> Result<Var> {
    let lf = net.forward(g, net_vars, label)?;
    let gf = net.forward(g, net_vars, generated)?;
    feature_matching_from_maps(g, &lf, &gf, map, stage_weights)
}

pub fn total_loss<T: Real>(g: &mut Graph<T>, gan: Var, fm: Var) -> Result<Var> {
    Ok(g.add(gan, fm)?)
}
