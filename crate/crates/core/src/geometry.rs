//! Imaging geometry: C-arm style cone-beam (or parallel-beam) poses, the
//! per-pixel rays they induce, and the acquisition trajectories.
//!
//! World frame: right-handed, origin at the isocenter, `+z` along the
//! patient axis. Azimuth rotates the source in the transversal `x-y` plane
//! starting from `+x`; inclination tilts it toward `+z`.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{arg, Error, Result};

pub type Vec3 = [f64; 3];

pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BeamMode {
    Cone,
    Parallel,
}

impl BeamMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BeamMode::Cone => "cone",
            BeamMode::Parallel => "parallel",
        }
    }
}

impl std::str::FromStr for BeamMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cone" => Ok(BeamMode::Cone),
            "parallel" => Ok(BeamMode::Parallel),
            other => arg(format!("unknown beam mode {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConeBeamGeometry {
    pub sad_mm: f64,
    pub sdd_mm: f64,
    pub det_rows: usize,
    pub det_cols: usize,
    pub det_spacing_mm: f64,
    pub beam_mode: BeamMode,
}

impl Default for ConeBeamGeometry {
    /// Desk-scale C-arm defaults: 785 mm source-isocenter, 1200 mm
    /// source-detector, 256 x 256 detector at 1.2 mm pitch.
    fn default() -> Self {
        Self {
            sad_mm: 785.0,
            sdd_mm: 1200.0,
            det_rows: 256,
            det_cols: 256,
            det_spacing_mm: 1.2,
            beam_mode: BeamMode::Cone,
        }
    }
}

/// Keys of the serialized geometry block, in output order.
pub const GEOMETRY_KEYS: [&str; 6] = ["sad_mm", "sdd_mm", "det_rows", "det_cols", "det_spacing_mm", "beam_mode"];

impl ConeBeamGeometry {
    pub fn validate(&self) -> Result<()> {
        let finite = self.sad_mm.is_finite() && self.sdd_mm.is_finite() && self.det_spacing_mm.is_finite();
        if !finite || self.sad_mm <= 0.0 {
            return arg(format!("sad_mm must be positive, got {}", self.sad_mm));
        }
        if self.beam_mode == BeamMode::Cone && self.sdd_mm <= self.sad_mm {
            return arg(format!("sdd_mm ({}) must exceed sad_mm ({}) in cone mode", self.sdd_mm, self.sad_mm));
        }
        if self.det_rows == 0 || self.det_cols == 0 {
            return arg("detector needs at least one row and column");
        }
        if self.det_spacing_mm <= 0.0 {
            return arg(format!("det_spacing_mm must be positive, got {}", self.det_spacing_mm));
        }
        Ok(())
    }

    /// Flat `key=value` block, one key per line.
    pub fn to_block(&self) -> String {
        format!(
            "sad_mm={}\nsdd_mm={}\ndet_rows={}\ndet_cols={}\ndet_spacing_mm={}\nbeam_mode={}\n",
            self.sad_mm,
            self.sdd_mm,
            self.det_rows,
            self.det_cols,
            self.det_spacing_mm,
            self.beam_mode.as_str()
        )
    }

    /// Reads the six geometry keys from a parsed key-value map.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| map.get(k).ok_or_else(|| Error::Argument(format!("geometry key {k} missing")));
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::Argument(format!("geometry key {k} is not a number")))
        };
        let count = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| Error::Argument(format!("geometry key {k} is not a count")))
        };
        let geom = Self {
            sad_mm: num("sad_mm")?,
            sdd_mm: num("sdd_mm")?,
            det_rows: count("det_rows")?,
            det_cols: count("det_cols")?,
            det_spacing_mm: num("det_spacing_mm")?,
            beam_mode: get("beam_mode")?.parse()?,
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn parse_block(text: &str) -> Result<Self> {
        let map = parse_kv(text);
        Self::from_map(&map)
    }

    /// Short stable identifier derived from the serialized block.
    pub fn id(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.to_block().as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }
}

pub(crate) fn parse_kv(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewPose {
    azimuth_deg: f64,
    inclination_deg: f64,
}

impl ViewPose {
    /// Azimuth is wrapped into `[0, 360)`; inclination must lie in `[-90, 90]`.
    pub fn new(azimuth_deg: f64, inclination_deg: f64) -> Result<Self> {
        if !azimuth_deg.is_finite() || !inclination_deg.is_finite() {
            return arg("pose angles must be finite");
        }
        if !(-90.0..=90.0).contains(&inclination_deg) {
            return arg(format!("inclination {inclination_deg} outside [-90, 90]"));
        }
        let mut az = azimuth_deg.rem_euclid(360.0);
        if az >= 360.0 {
            az = 0.0;
        }
        Ok(Self { azimuth_deg: az, inclination_deg })
    }

    pub fn azimuth_deg(&self) -> f64 {
        self.azimuth_deg
    }

    pub fn inclination_deg(&self) -> f64 {
        self.inclination_deg
    }

    /// Unit vector from the isocenter toward the source.
    fn source_dir(&self) -> Vec3 {
        let (sa, ca) = self.azimuth_deg.to_radians().sin_cos();
        let (si, ci) = self.inclination_deg.to_radians().sin_cos();
        [ci * ca, ci * sa, si]
    }

    /// Detector column axis (tangent to the azimuthal rotation).
    fn u_axis(&self) -> Vec3 {
        let (sa, ca) = self.azimuth_deg.to_radians().sin_cos();
        [-sa, ca, 0.0]
    }

    /// Detector row axis, pointing toward `+z` at zero inclination.
    fn v_axis(&self) -> Vec3 {
        let (sa, ca) = self.azimuth_deg.to_radians().sin_cos();
        let (si, ci) = self.inclination_deg.to_radians().sin_cos();
        [-si * ca, -si * sa, ci]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin_mm: Vec3,
    /// Unit direction.
    pub direction: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        add(self.origin_mm, scale(self.direction, t))
    }

    /// Distance from a point to the infinite line carrying the ray.
    pub fn distance_to(&self, p: Vec3) -> f64 {
        let d = sub(p, self.origin_mm);
        let along = dot(d, self.direction);
        norm(sub(d, scale(self.direction, along)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrajectoryLabel {
    Train,
    Test,
    Custom,
}

impl TrajectoryLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            TrajectoryLabel::Train => "train",
            TrajectoryLabel::Test => "test",
            TrajectoryLabel::Custom => "custom",
        }
    }
}

impl std::str::FromStr for TrajectoryLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            "custom" => Ok(Self::Custom),
            other => arg(format!("unknown trajectory label {other:?}")),
        }
    }
}

impl fmt::Display for TrajectoryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    poses: Vec<ViewPose>,
    label: TrajectoryLabel,
}

impl Trajectory {
    pub fn new(poses: Vec<ViewPose>, label: TrajectoryLabel) -> Result<Self> {
        if poses.is_empty() {
            return arg("trajectory needs at least one pose");
        }
        Ok(Self { poses, label })
    }

    pub fn poses(&self) -> &[ViewPose] {
        &self.poses
    }

    pub fn label(&self) -> TrajectoryLabel {
        self.label
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// Default factorization of the 450-view training distribution.
pub const TRAIN_AZIMUTHS: usize = 30;
pub const TRAIN_INCLINATIONS: usize = 15;
/// Stand-in half-range of the training inclinations (degrees); configurable.
pub const TRAIN_INCLINATION_RANGE_DEG: f64 = 20.0;
pub const TEST_VIEWS: usize = 360;

/// Equiangular grid: `n_azimuth` steps over `[0, 360)` times
/// `n_inclination` steps spanning `[-range, +range]` inclusive. Azimuth
/// varies slowest.
pub fn make_training_trajectory(n_azimuth: usize, n_inclination: usize, incl_range_deg: f64) -> Result<Trajectory> {
    if n_azimuth == 0 || n_inclination == 0 {
        return arg("training trajectory needs at least one azimuth and one inclination");
    }
    if !(0.0..=90.0).contains(&incl_range_deg) {
        return arg(format!("inclination range {incl_range_deg} outside [0, 90]"));
    }
    let az_step = 360.0 / n_azimuth as f64;
    let inclinations: Vec<f64> = if n_inclination == 1 {
        vec![0.0]
    } else {
        let step = 2.0 * incl_range_deg / (n_inclination - 1) as f64;
        (0..n_inclination).map(|j| -incl_range_deg + j as f64 * step).collect()
    };
    let mut poses = Vec::with_capacity(n_azimuth * n_inclination);
    for i in 0..n_azimuth {
        for &incl in &inclinations {
            poses.push(ViewPose::new(i as f64 * az_step, incl)?);
        }
    }
    Trajectory::new(poses, TrajectoryLabel::Train)
}

/// Full transversal rotation: `n_views` equiangular azimuths at zero inclination.
pub fn make_test_trajectory(n_views: usize) -> Result<Trajectory> {
    if n_views == 0 {
        return arg("test trajectory needs at least one view");
    }
    let step = 360.0 / n_views as f64;
    let poses = (0..n_views).map(|i| ViewPose::new(i as f64 * step, 0.0)).collect::<Result<_>>()?;
    Trajectory::new(poses, TrajectoryLabel::Test)
}

/// Cone vertex for a pose, `sad_mm` from the isocenter.
pub fn source_position(geom: &ConeBeamGeometry, pose: &ViewPose) -> Result<Vec3> {
    if geom.beam_mode != BeamMode::Cone {
        return Err(Error::UnsupportedMode(geom.beam_mode.as_str()));
    }
    Ok(scale(pose.source_dir(), geom.sad_mm))
}

/// Signed detector-plane offsets (mm) of a pixel center from the principal
/// point. Row 0 is the top (`+v`) edge.
fn pixel_offsets(geom: &ConeBeamGeometry, row: usize, col: usize) -> (f64, f64) {
    let u = (col as f64 + 0.5 - geom.det_cols as f64 / 2.0) * geom.det_spacing_mm;
    let v = (geom.det_rows as f64 / 2.0 - row as f64 - 0.5) * geom.det_spacing_mm;
    (u, v)
}

pub fn ray_for_pixel(geom: &ConeBeamGeometry, pose: &ViewPose, row: usize, col: usize) -> Result<Ray> {
    if row >= geom.det_rows || col >= geom.det_cols {
        return arg(format!(
            "pixel ({row}, {col}) outside {}x{} detector",
            geom.det_rows, geom.det_cols
        ));
    }
    Ok(ray_unchecked(geom, pose, row, col))
}

pub(crate) fn ray_unchecked(geom: &ConeBeamGeometry, pose: &ViewPose, row: usize, col: usize) -> Ray {
    let e = pose.source_dir();
    let (u, v) = pixel_offsets(geom, row, col);
    let lateral = add(scale(pose.u_axis(), u), scale(pose.v_axis(), v));
    match geom.beam_mode {
        BeamMode::Cone => {
            let src = scale(e, geom.sad_mm);
            let center = scale(e, geom.sad_mm - geom.sdd_mm);
            let target = add(center, lateral);
            let d = sub(target, src);
            let len = norm(d);
            Ray { origin_mm: src, direction: scale(d, 1.0 / len) }
        }
        BeamMode::Parallel => Ray {
            origin_mm: add(scale(e, geom.sad_mm), lateral),
            direction: scale(e, -1.0),
        },
    }
}
