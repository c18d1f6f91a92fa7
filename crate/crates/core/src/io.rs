//! On-disk formats: volumes (`.volh` header + `.vol` payload), projection
//! sets (directory with `manifest.txt` + per-view `.img` payloads) and
//! 16-bit PGM previews. Text headers are `key=value` lines; floats are
//! written in shortest round-trip form so parse then serialize is lossless.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{parse_kv, ConeBeamGeometry, Trajectory, TrajectoryLabel, ViewPose};
use crate::projector::{Channel, ProjectionImage, ProjectionSet};
use crate::volume::Volume;

pub const VOLUME_FORMAT: &str = "projtrans-volume-1";
pub const PROJSET_FORMAT: &str = "projtrans-projset-1";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// Free-form provenance entries written as `meta.<key>=<value>`.
pub type Meta = BTreeMap<String, String>;

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn f32_to_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn read_f32le(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::format("payload", path, format!("{} bytes, expected {}", bytes.len(), expected * 4)));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

fn write_meta(out: &mut String, meta: &Meta) {
    for (k, v) in meta {
        let _ = writeln!(out, "meta.{k}={v}");
    }
}

fn read_meta(map: &BTreeMap<String, String>) -> Meta {
    map.iter().filter_map(|(k, v)| k.strip_prefix("meta.").map(|k| (k.to_string(), v.clone()))).collect()
}

fn triple<T: std::str::FromStr>(s: &str) -> Option<[T; 3]> {
    let parts: Vec<T> = s.split_whitespace().map(|p| p.parse().ok()).collect::<Option<_>>()?;
    parts.try_into().ok()
}

/// `<stem>.volh` / `<stem>.vol` pair for a volume stem path.
pub fn volume_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("volh"), stem.with_extension("vol"))
}

pub fn write_volume(stem: &Path, vol: &Volume, meta: &Meta) -> Result<()> {
    let (header, payload) = volume_paths(stem);
    let [nx, ny, nz] = vol.dims();
    let [sx, sy, sz] = vol.spacing_mm();
    let [ox, oy, oz] = vol.origin_mm();
    let mut text = String::new();
    let _ = writeln!(text, "format={VOLUME_FORMAT}");
    let _ = writeln!(text, "dims={nx} {ny} {nz}");
    let _ = writeln!(text, "spacing_mm={sx} {sy} {sz}");
    let _ = writeln!(text, "origin_mm={ox} {oy} {oz}");
    let _ = writeln!(text, "dtype=f32le");
    let _ = writeln!(text, "order=x-fastest");
    let _ = writeln!(text, "payload={}", payload.file_name().unwrap_or_default().to_string_lossy());
    write_meta(&mut text, meta);
    write_file(&header, text.as_bytes())?;
    write_file(&payload, &f32_to_bytes(vol.data()))
}

pub fn read_volume(stem: &Path) -> Result<(Volume, Meta)> {
    let (header, payload) = volume_paths(stem);
    let map = parse_kv(&read_text(&header)?);
    let bad = |detail: &str| Error::format("volume header", &header, detail);
    if map.get("format").map(String::as_str) != Some(VOLUME_FORMAT) {
        return Err(bad("unknown format tag"));
    }
    if map.get("dtype").map(String::as_str) != Some("f32le") || map.get("order").map(String::as_str) != Some("x-fastest") {
        return Err(bad("only f32le x-fastest payloads are supported"));
    }
    let dims: [usize; 3] = map.get("dims").and_then(|s| triple(s)).ok_or_else(|| bad("bad dims"))?;
    let spacing: [f64; 3] = map.get("spacing_mm").and_then(|s| triple(s)).ok_or_else(|| bad("bad spacing_mm"))?;
    let origin: [f64; 3] = map.get("origin_mm").and_then(|s| triple(s)).ok_or_else(|| bad("bad origin_mm"))?;
    let data = read_f32le(&payload, dims.iter().product())?;
    let vol = Volume::new(dims, spacing, origin, data).map_err(|e| bad(&e.to_string()))?;
    Ok((vol, read_meta(&map)))
}

pub fn view_file_name(index: usize) -> String {
    format!("view_{index:04}.img")
}

/// Writes `manifest.txt` and one payload per view into `dir`.
pub fn write_projection_set(dir: &Path, set: &ProjectionSet, meta: &Meta) -> Result<()> {
    set.validate()?;
    let mut text = String::new();
    let _ = writeln!(text, "format={PROJSET_FORMAT}");
    let _ = writeln!(text, "subject_id={}", set.subject_id);
    let _ = writeln!(text, "channel={}", set.channel.as_str());
    let _ = writeln!(text, "trajectory_label={}", set.trajectory.label());
    text.push_str(&set.geometry.to_block());
    write_meta(&mut text, meta);
    let _ = writeln!(text, "views={}", set.images.len());
    let _ = writeln!(text, "# index azimuth_deg inclination_deg file");
    for (i, pose) in set.trajectory.poses().iter().enumerate() {
        let _ = writeln!(text, "{i} {} {} {}", pose.azimuth_deg(), pose.inclination_deg(), view_file_name(i));
    }
    write_file(&dir.join(MANIFEST_FILE), text.as_bytes())?;
    for (i, img) in set.images.iter().enumerate() {
        write_file(&dir.join(view_file_name(i)), &f32_to_bytes(&img.data))?;
    }
    Ok(())
}

/// Header portion of a projection-set manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionSetHeader {
    pub subject_id: String,
    pub channel: Channel,
    pub geometry: ConeBeamGeometry,
    pub trajectory: Trajectory,
    pub files: Vec<String>,
    pub meta: Meta,
}

pub fn read_projection_header(dir: &Path) -> Result<ProjectionSetHeader> {
    let path = dir.join(MANIFEST_FILE);
    let text = read_text(&path)?;
    let bad = |detail: String| Error::format("projection manifest", &path, detail);
    let mut kv = String::new();
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if line.contains('=') {
            kv.push_str(line);
            kv.push('\n');
        } else {
            rows.push(line);
        }
    }
    let map = parse_kv(&kv);
    if map.get("format").map(String::as_str) != Some(PROJSET_FORMAT) {
        return Err(bad("unknown format tag".into()));
    }
    let field = |k: &str| map.get(k).cloned().ok_or_else(|| bad(format!("missing {k}")));
    let geometry = ConeBeamGeometry::from_map(&map).map_err(|e| bad(e.to_string()))?;
    let channel: Channel = field("channel")?.parse().map_err(|e: Error| bad(e.to_string()))?;
    let label: TrajectoryLabel = field("trajectory_label")?.parse().map_err(|e: Error| bad(e.to_string()))?;
    let views: usize = field("views")?.parse().map_err(|_| bad("bad views count".into()))?;
    if rows.len() != views {
        return Err(bad(format!("{} trajectory rows for {views} views", rows.len())));
    }
    let mut poses = Vec::with_capacity(views);
    let mut files = Vec::with_capacity(views);
    for (i, row) in rows.iter().enumerate() {
        let parts: Vec<&str> = row.split_whitespace().collect();
        let parsed = match parts.as_slice() {
            [idx, az, inc, file] => idx
                .parse::<usize>()
                .ok()
                .filter(|&n| n == i)
                .and_then(|_| Some((az.parse::<f64>().ok()?, inc.parse::<f64>().ok()?, file.to_string()))),
            _ => None,
        };
        let (az, inc, file) = parsed.ok_or_else(|| bad(format!("bad trajectory row {i}: {row:?}")))?;
        poses.push(ViewPose::new(az, inc).map_err(|e| bad(e.to_string()))?);
        files.push(file);
    }
    let trajectory = Trajectory::new(poses, label).map_err(|e| bad(e.to_string()))?;
    Ok(ProjectionSetHeader { subject_id: field("subject_id")?, channel, geometry, trajectory, files, meta: read_meta(&map) })
}

pub fn read_view(dir: &Path, header: &ProjectionSetHeader, index: usize) -> Result<ProjectionImage> {
    let g = &header.geometry;
    let data = read_f32le(&dir.join(&header.files[index]), g.det_rows * g.det_cols)?;
    ProjectionImage::new(g.det_rows, g.det_cols, data, header.trajectory.poses()[index], g.id())
}

pub fn read_projection_set(dir: &Path) -> Result<(ProjectionSet, Meta)> {
    let header = read_projection_header(dir)?;
    let images = (0..header.files.len()).map(|i| read_view(dir, &header, i)).collect::<Result<Vec<_>>>()?;
    let set = ProjectionSet {
        geometry: header.geometry,
        trajectory: header.trajectory,
        images,
        subject_id: header.subject_id,
        channel: header.channel,
    };
    Ok((set, header.meta))
}

/// Binary 16-bit PGM, min-max windowed. A constant image maps to zero.
pub fn pgm16_bytes(rows: usize, cols: usize, data: &[f32]) -> Vec<u8> {
    let (lo, hi) = data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = hi - lo;
    let mut out = format!("P5\n{cols} {rows}\n65535\n").into_bytes();
    for &v in data {
        let level = if span > 0.0 { ((v - lo) / span * 65535.0).round() as u16 } else { 0 };
        out.extend_from_slice(&level.to_be_bytes());
    }
    out
}

pub fn write_pgm16(path: &Path, rows: usize, cols: usize, data: &[f32]) -> Result<()> {
    write_file(path, &pgm16_bytes(rows, cols, data))
}
