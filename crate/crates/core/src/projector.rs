//! Ray-marching evaluation of the X-ray transform.

use rayon::prelude::*;

use crate::error::{arg, Result};
use crate::geometry::{ray_unchecked, ConeBeamGeometry, Ray, Trajectory, ViewPose};
use crate::volume::Volume;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Channel {
    Mr,
    Xray,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Mr => "mr",
            Channel::Xray => "xray",
        }
    }
}

impl std::str::FromStr for Channel {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mr" => Ok(Channel::Mr),
            "xray" => Ok(Channel::Xray),
            other => arg(format!("unknown channel {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionImage {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
    pub pose: ViewPose,
    pub geometry_id: String,
}

impl ProjectionImage {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>, pose: ViewPose, geometry_id: impl Into<String>) -> Result<Self> {
        if data.len() != rows * cols {
            return arg(format!("image data has {} values, expected {rows}x{cols}", data.len()));
        }
        Ok(Self { rows, cols, data, pose, geometry_id: geometry_id.into() })
    }

    pub fn at(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    /// Same pose and geometry, new pixel values.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Self::new(self.rows, self.cols, data, self.pose, self.geometry_id.clone())
    }

    /// Left-right flip (column reversal).
    pub fn mirrored(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.cols) {
            data.extend(row.iter().rev());
        }
        Self { data, ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionSet {
    pub geometry: ConeBeamGeometry,
    pub trajectory: Trajectory,
    pub images: Vec<ProjectionImage>,
    pub subject_id: String,
    pub channel: Channel,
}

impl ProjectionSet {
    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.trajectory.len() {
            return arg(format!(
                "projection set has {} images for {} poses",
                self.images.len(),
                self.trajectory.len()
            ));
        }
        for (img, pose) in self.images.iter().zip(self.trajectory.poses()) {
            if img.rows != self.geometry.det_rows || img.cols != self.geometry.det_cols {
                return arg("projection images must match the detector size");
            }
            if img.pose != *pose {
                return arg("projection image pose differs from its trajectory entry");
            }
        }
        Ok(())
    }
}

/// Default marching step: half the finest voxel spacing.
pub fn default_step(vol: &Volume) -> f64 {
    vol.min_spacing() / 2.0
}

/// Parameter interval `[t0, t1]` where the line crosses the volume box.
fn clip(vol: &Volume, ray: &Ray) -> Option<(f64, f64)> {
    let (lo, hi) = vol.bounds();
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        let o = ray.origin_mm[a];
        let d = ray.direction[a];
        if d == 0.0 {
            if o < lo[a] || o > hi[a] {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((lo[a] - o) / d, (hi[a] - o) / d);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t1 > t0).then_some((t0, t1))
}

fn check_ray(ray: &Ray, step_mm: f64) -> Result<()> {
    if !(step_mm > 0.0 && step_mm.is_finite()) {
        return arg(format!("step_mm must be positive and finite, got {step_mm}"));
    }
    if ray.origin_mm.iter().chain(&ray.direction).any(|v| !v.is_finite()) {
        return arg("ray must be finite");
    }
    Ok(())
}

/// Midpoint-rule integral of the trilinear field along the chord of the ray
/// through the volume box. The chord is split into `ceil(len / step)` equal
/// segments so the sampled interval is exactly the chord.
pub fn line_integral(vol: &Volume, ray: &Ray, step_mm: f64) -> Result<f64> {
    check_ray(ray, step_mm)?;
    Ok(integrate(vol, ray, step_mm))
}

fn integrate(vol: &Volume, ray: &Ray, step_mm: f64) -> f64 {
    let Some((t0, t1)) = clip(vol, ray) else {
        return 0.0;
    };
    let len = t1 - t0;
    let n = (len / step_mm).ceil().max(1.0) as usize;
    let dt = len / n as f64;
    let mut acc = 0.0;
    for k in 0..n {
        acc += vol.sample(ray.at(t0 + (k as f64 + 0.5) * dt));
    }
    acc * dt
}

pub fn project_view(vol: &Volume, geom: &ConeBeamGeometry, pose: &ViewPose, step_mm: f64) -> Result<ProjectionImage> {
    geom.validate()?;
    if !(step_mm > 0.0 && step_mm.is_finite()) {
        return arg(format!("step_mm must be positive and finite, got {step_mm}"));
    }
    let (rows, cols) = (geom.det_rows, geom.det_cols);
    let mut data = vec![0.0f32; rows * cols];
    data.par_chunks_mut(cols).enumerate().for_each(|(r, row)| {
        for (c, px) in row.iter_mut().enumerate() {
            *px = integrate(vol, &ray_unchecked(geom, pose, r, c), step_mm) as f32;
        }
    });
    ProjectionImage::new(rows, cols, data, *pose, geom.id())
}

pub fn project_trajectory(
    vol: &Volume,
    geom: &ConeBeamGeometry,
    traj: &Trajectory,
    step_mm: f64,
    subject_id: &str,
    channel: Channel,
) -> Result<ProjectionSet> {
    let images = traj
        .poses()
        .par_iter()
        .map(|pose| project_view(vol, geom, pose, step_mm))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProjectionSet {
        geometry: geom.clone(),
        trajectory: traj.clone(),
        images,
        subject_id: subject_id.to_string(),
        channel,
    })
}
