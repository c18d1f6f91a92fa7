use crate::error::{arg, Result};
use crate::geometry::Vec3;

/// Scalar field on a regular grid, x-fastest. `origin_mm` is the world
/// position of the center of voxel (0, 0, 0).
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    origin_mm: Vec3,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], origin_mm: Vec3, data: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return arg(format!("volume dims must be positive, got {dims:?}"));
        }
        if spacing_mm.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return arg(format!("volume spacing must be positive, got {spacing_mm:?}"));
        }
        if origin_mm.iter().any(|o| !o.is_finite()) {
            return arg("volume origin must be finite");
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return arg(format!("volume data has {} values, dims {dims:?} need {n}", data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return arg("volume data must be finite");
        }
        Ok(Self { dims, spacing_mm, origin_mm, data })
    }

    pub fn zeros(dims: [usize; 3], spacing_mm: [f64; 3], origin_mm: Vec3) -> Result<Self> {
        Self::new(dims, spacing_mm, origin_mm, vec![0.0; dims.iter().product()])
    }

    /// Grid whose center coincides with the world origin.
    pub fn centered(dims: [usize; 3], spacing_mm: [f64; 3]) -> Result<Self> {
        Self::zeros(dims, spacing_mm, centered_origin(dims, spacing_mm))
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn origin_mm(&self) -> Vec3 {
        self.origin_mm
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mutable voxel access. Callers must keep values finite.
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f32) {
        let idx = self.index(i, j, k);
        self.data[idx] = v;
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        [
            self.origin_mm[0] + i as f64 * self.spacing_mm[0],
            self.origin_mm[1] + j as f64 * self.spacing_mm[1],
            self.origin_mm[2] + k as f64 * self.spacing_mm[2],
        ]
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing_mm.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Axis-aligned bounding box covering every voxel's full extent.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..3 {
            lo[a] = self.origin_mm[a] - 0.5 * self.spacing_mm[a];
            hi[a] = self.origin_mm[a] + (self.dims[a] as f64 - 0.5) * self.spacing_mm[a];
        }
        (lo, hi)
    }

    pub fn same_grid(&self, other: &Volume) -> bool {
        self.dims == other.dims && self.spacing_mm == other.spacing_mm && self.origin_mm == other.origin_mm
    }

    /// Trilinear interpolation with neighbors clamped to the grid.
    pub fn sample(&self, p: Vec3) -> f64 {
        let mut base = [0usize; 3];
        let mut next = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let last = self.dims[a] - 1;
            let c = ((p[a] - self.origin_mm[a]) / self.spacing_mm[a]).clamp(0.0, last as f64);
            let f = c.floor();
            base[a] = f as usize;
            next[a] = (base[a] + 1).min(last);
            frac[a] = c - f;
        }
        let nx = self.dims[0];
        let nxy = nx * self.dims[1];
        let at = |i: usize, j: usize, k: usize| self.data[i + nx * j + nxy * k] as f64;
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let [i0, j0, k0] = base;
        let [i1, j1, k1] = next;
        let [fx, fy, fz] = frac;
        let c00 = lerp(at(i0, j0, k0), at(i1, j0, k0), fx);
        let c10 = lerp(at(i0, j1, k0), at(i1, j1, k0), fx);
        let c01 = lerp(at(i0, j0, k1), at(i1, j0, k1), fx);
        let c11 = lerp(at(i0, j1, k1), at(i1, j1, k1), fx);
        lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz)
    }
}

pub fn centered_origin(dims: [usize; 3], spacing_mm: [f64; 3]) -> Vec3 {
    let mut o = [0.0; 3];
    for a in 0..3 {
        o[a] = -0.5 * (dims[a] as f64 - 1.0) * spacing_mm[a];
    }
    o
}
