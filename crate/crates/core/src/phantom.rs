//! Synthetic head phantoms with paired CT-attenuation and MR-intensity
//! volumes on one shared grid.
//!
//! The material table reproduces the ambiguity that makes MR→X-ray
//! translation ill-posed: both air and bone are dark in MR but differ
//! strongly in attenuation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{arg, Result};
use crate::geometry::{dot, norm, scale, sub, Vec3};
use crate::volume::{centered_origin, Volume};

#[derive(Clone, Debug, PartialEq)]
pub struct MaterialSpec {
    pub name: String,
    pub mu_per_mm: f32,
    pub mr_intensity: f32,
}

impl MaterialSpec {
    pub fn new(name: &str, mu_per_mm: f32, mr_intensity: f32) -> Self {
        Self { name: name.to_string(), mu_per_mm, mr_intensity }
    }

    fn validate(&self) -> Result<()> {
        let ok = |v: f32| v.is_finite() && v >= 0.0;
        if !ok(self.mu_per_mm) || !ok(self.mr_intensity) {
            return arg(format!("material {} needs finite non-negative values", self.name));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaterialTable {
    pub air: MaterialSpec,
    pub soft_tissue: MaterialSpec,
    pub bone: MaterialSpec,
    pub vessel: MaterialSpec,
}

impl Default for MaterialTable {
    fn default() -> Self {
        Self {
            air: MaterialSpec::new("air", 0.0, 0.0),
            soft_tissue: MaterialSpec::new("soft_tissue", 0.019, 0.6),
            bone: MaterialSpec::new("bone", 0.048, 0.02),
            vessel: MaterialSpec::new("vessel", 0.021, 1.0),
        }
    }
}

impl MaterialTable {
    fn validate(&self) -> Result<()> {
        for m in [&self.air, &self.soft_tissue, &self.bone, &self.vessel] {
            m.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadPhantomParams {
    pub seed: u64,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub skull_thickness_mm: f64,
    pub n_sinus_cavities: usize,
    pub n_vessels: usize,
    /// Relative amplitude of the seeded geometric randomization.
    pub jitter: f64,
    /// Fraction of axial slices, counted from the top, that are zeroed.
    pub truncate_axial_fraction: f64,
    pub materials: MaterialTable,
}

impl Default for HeadPhantomParams {
    fn default() -> Self {
        Self {
            seed: 0,
            dims: [128, 128, 128],
            spacing_mm: [1.5; 3],
            skull_thickness_mm: 6.0,
            n_sinus_cavities: 3,
            n_vessels: 4,
            jitter: 0.08,
            truncate_axial_fraction: 0.0,
            materials: MaterialTable::default(),
        }
    }
}

pub const MIN_PHANTOM_DIM: usize = 16;

impl HeadPhantomParams {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < MIN_PHANTOM_DIM) {
            return arg(format!("phantom grid {:?} too small, every dim must be >= {MIN_PHANTOM_DIM}", self.dims));
        }
        if self.spacing_mm.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return arg("phantom spacing must be positive");
        }
        if !(self.skull_thickness_mm > 0.0 && self.skull_thickness_mm.is_finite()) {
            return arg("skull_thickness_mm must be positive");
        }
        if !(0.0..0.5).contains(&self.jitter) {
            return arg(format!("jitter {} outside [0, 0.5)", self.jitter));
        }
        if !(0.0..1.0).contains(&self.truncate_axial_fraction) {
            return arg(format!("truncate_axial_fraction {} outside [0, 1)", self.truncate_axial_fraction));
        }
        self.materials.validate()
    }
}

#[derive(Clone, Copy, Debug)]
struct Ellipsoid {
    center: Vec3,
    radii: Vec3,
}

impl Ellipsoid {
    /// Implicit value: `< 1` inside, `1` on the surface.
    fn level(&self, p: Vec3) -> f64 {
        (0..3).map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2)).sum()
    }

    fn contains(&self, p: Vec3) -> bool {
        self.level(p) <= 1.0
    }

    fn shrunk(&self, by_mm: f64) -> Ellipsoid {
        Ellipsoid { center: self.center, radii: self.radii.map(|r| (r - by_mm).max(1e-3)) }
    }
}

struct Tube {
    points: Vec<Vec3>,
    radius: f64,
}

impl Tube {
    fn contains(&self, p: Vec3) -> bool {
        self.points.windows(2).any(|s| segment_distance(p, s[0], s[1]) <= self.radius)
    }
}

fn segment_distance(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 { (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    norm(sub(p, crate::geometry::add(a, scale(ab, t))))
}

fn wiggle(rng: &mut ChaCha8Rng, amp: f64) -> f64 {
    if amp > 0.0 {
        rng.gen_range(-amp..=amp)
    } else {
        0.0
    }
}

struct Layout {
    head: Ellipsoid,
    skull_outer: Ellipsoid,
    brain: Ellipsoid,
    sinuses: Vec<Ellipsoid>,
    vessels: Vec<Tube>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Tissue {
    Air,
    Soft,
    Bone,
    Vessel,
}

impl Layout {
    fn random(params: &HeadPhantomParams) -> Layout {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let j = params.jitter;
        let half: Vec3 = std::array::from_fn(|a| 0.5 * params.dims[a] as f64 * params.spacing_mm[a]);

        let base = [0.72, 0.80, 0.78];
        let radii: Vec3 = std::array::from_fn(|a| half[a] * base[a] * (1.0 + wiggle(&mut rng, j)));
        let center: Vec3 = std::array::from_fn(|a| half[a] * 0.5 * wiggle(&mut rng, j));
        let head = Ellipsoid { center, radii };
        let scalp = 0.06 * radii.iter().copied().fold(f64::INFINITY, f64::min);
        let skull_outer = head.shrunk(scalp);
        let brain = skull_outer.shrunk(params.skull_thickness_mm);

        let mut sinuses = Vec::with_capacity(params.n_sinus_cavities);
        for _ in 0..params.n_sinus_cavities {
            // anterior-inferior part of the skull shell
            let az: f64 = std::f64::consts::FRAC_PI_2 + rng.gen_range(-0.7..0.7);
            let el: f64 = rng.gen_range(-0.6..0.1);
            let dir = [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()];
            let shell_mid: Vec3 = std::array::from_fn(|a| {
                skull_outer.center[a] + dir[a] * (skull_outer.radii[a] - 0.5 * params.skull_thickness_mm)
            });
            let r = params.skull_thickness_mm * rng.gen_range(0.9..1.6);
            sinuses.push(Ellipsoid { center: shell_mid, radii: [r * 1.4, r, r * 0.8] });
        }

        let min_spacing = params.spacing_mm.iter().copied().fold(f64::INFINITY, f64::min);
        let mut vessels = Vec::with_capacity(params.n_vessels);
        for _ in 0..params.n_vessels {
            let mut pt = || -> Vec3 {
                std::array::from_fn(|a| brain.center[a] + brain.radii[a] * rng.gen_range(-0.6..0.6))
            };
            let points = vec![pt(), pt(), pt(), pt()];
            let radius = min_spacing * rng.gen_range(1.0..2.0);
            vessels.push(Tube { points, radius });
        }
        Layout { head, skull_outer, brain, sinuses, vessels }
    }

    fn tissue(&self, p: Vec3) -> Tissue {
        if !self.head.contains(p) {
            return Tissue::Air;
        }
        if !self.skull_outer.contains(p) {
            return Tissue::Soft;
        }
        if self.brain.contains(p) {
            if self.vessels.iter().any(|v| v.contains(p)) {
                return Tissue::Vessel;
            }
            return Tissue::Soft;
        }
        if self.sinuses.iter().any(|s| s.contains(p)) {
            return Tissue::Air;
        }
        Tissue::Bone
    }
}

/// Returns `(ct, mr)` on the same centered grid.
pub fn generate_head_phantom(params: &HeadPhantomParams) -> Result<(Volume, Volume)> {
    params.validate()?;
    let layout = Layout::random(params);
    let mut ct = Volume::centered(params.dims, params.spacing_mm)?;
    let mut mr = ct.clone();
    let [nx, ny, nz] = params.dims;
    let m = &params.materials;
    let keep_z = nz - truncated_slices(nz, params.truncate_axial_fraction);
    for k in 0..keep_z {
        for j in 0..ny {
            for i in 0..nx {
                let mat = match layout.tissue(ct.voxel_center(i, j, k)) {
                    Tissue::Air => &m.air,
                    Tissue::Soft => &m.soft_tissue,
                    Tissue::Bone => &m.bone,
                    Tissue::Vessel => &m.vessel,
                };
                ct.set(i, j, k, mat.mu_per_mm);
                mr.set(i, j, k, mat.mr_intensity);
            }
        }
    }
    Ok((ct, mr))
}

/// Number of top slices removed for a truncation fraction.
pub fn truncated_slices(nz: usize, fraction: f64) -> usize {
    ((fraction * nz as f64).ceil() as usize).min(nz.saturating_sub(1))
}

/// Which cohort members receive the base truncation.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum TruncationSubset {
    #[default]
    All,
    Only(Vec<usize>),
}

impl TruncationSubset {
    fn applies(&self, index: usize) -> bool {
        match self {
            TruncationSubset::All => true,
            TruncationSubset::Only(list) => list.contains(&index),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CohortMember {
    pub subject_id: String,
    pub seed: u64,
    pub truncate_axial_fraction: f64,
    pub ct: Volume,
    pub mr: Volume,
}

pub fn subject_id(index: usize) -> String {
    format!("subj{index:03}")
}

/// `n` subjects seeded `base.seed + index`, generated concurrently.
pub fn generate_cohort(n: usize, base: &HeadPhantomParams, truncation: &TruncationSubset) -> Result<Vec<CohortMember>> {
    if n == 0 {
        return arg("cohort needs at least one subject");
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut params = base.clone();
            params.seed = base.seed.wrapping_add(i as u64);
            if !truncation.applies(i) {
                params.truncate_axial_fraction = 0.0;
            }
            let (ct, mr) = generate_head_phantom(&params)?;
            Ok(CohortMember {
                subject_id: subject_id(i),
                seed: params.seed,
                truncate_axial_fraction: params.truncate_axial_fraction,
                ct,
                mr,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AnalyticShape {
    Sphere { radius_mm: f64 },
    Ellipsoid { radii_mm: Vec3 },
}

/// Grid description for analytic phantoms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: Vec3,
}

impl Grid {
    pub fn centered(dims: [usize; 3], spacing_mm: [f64; 3]) -> Self {
        Self { dims, spacing_mm, origin_mm: centered_origin(dims, spacing_mm) }
    }
}

/// Voxel equals `value` iff its center lies inside the shape.
pub fn generate_analytic_phantom(shape: AnalyticShape, center_mm: Vec3, value: f32, grid: &Grid) -> Result<Volume> {
    let radii = match shape {
        AnalyticShape::Sphere { radius_mm } => [radius_mm; 3],
        AnalyticShape::Ellipsoid { radii_mm } => radii_mm,
    };
    if radii.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
        return arg(format!("analytic phantom radii must be positive, got {radii:?}"));
    }
    if !value.is_finite() {
        return arg("analytic phantom value must be finite");
    }
    let e = Ellipsoid { center: center_mm, radii };
    let mut vol = Volume::zeros(grid.dims, grid.spacing_mm, grid.origin_mm)?;
    let [nx, ny, nz] = grid.dims;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if e.contains(vol.voxel_center(i, j, k)) {
                    vol.set(i, j, k, value);
                }
            }
        }
    }
    Ok(vol)
}
