//! Inference and projector throughput measurement.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use projtrans::geometry::make_test_trajectory;
use projtrans::io::write_file;
use projtrans::model::Generator;
use projtrans::phantom::generate_head_phantom;
use projtrans::projector::{default_step, project_view};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::pipeline::{run_meta, Layout};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub fps_infer: f64,
    pub views_per_s_projector: f64,
    pub hardware: String,
    pub threads: usize,
    pub input_size: usize,
    pub repetitions: usize,
    pub warmup: usize,
    pub preset: String,
}

impl BenchReport {
    pub fn to_text(&self, meta: &projtrans::io::Meta) -> String {
        let mut out = String::new();
        for (k, v) in meta {
            let _ = writeln!(out, "meta.{k}={v}");
        }
        let _ = writeln!(out, "fps_infer={:.3}", self.fps_infer);
        let _ = writeln!(out, "views_per_s_projector={:.3}", self.views_per_s_projector);
        let _ = writeln!(out, "hardware={}", self.hardware);
        let _ = writeln!(out, "threads={}", self.threads);
        let _ = writeln!(out, "preset={}", self.preset);
        let _ = writeln!(out, "input={}x{}", self.input_size, self.input_size);
        let _ = writeln!(out, "repetitions={}", self.repetitions);
        let _ = writeln!(out, "warmup={}", self.warmup);
        let _ = writeln!(out, "note=timings are wall-clock on the host above; no target rate is implied");
        out
    }
}

/// CPU model and logical core count.
pub fn hardware_description() -> String {
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| s.lines().find(|l| l.starts_with("model name")).and_then(|l| l.split_once(':')).map(|(_, v)| v.trim().to_string()))
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("{model}, {cores} logical cores, {}", std::env::consts::OS)
}

/// Times generator inference on `size × size` inputs and the forward projector
/// on the configured geometry.
pub fn run_bench(cfg: &RunConfig) -> Result<BenchReport, CliError> {
    let b = &cfg.bench;
    let arch = cfg.arch()?;
    let m = arch.size_multiple();
    if b.size % m != 0 {
        return Err(CliError::Config(format!("bench.size {} must be a multiple of {m}", b.size)));
    }
    let generator = Generator::<f32>::new(&arch, cfg.seed)?;
    let input: Vec<f32> = (0..b.size * b.size).map(|i| ((i * 7919) % 1000) as f32 / 500.0 - 1.0).collect();
    for _ in 0..b.warmup {
        generator.predict(&input, b.size, b.size)?;
    }
    let t = Instant::now();
    for _ in 0..b.repetitions {
        generator.predict(&input, b.size, b.size)?;
    }
    let fps_infer = b.repetitions as f64 / t.elapsed().as_secs_f64();

    let views_per_s_projector = if b.projector_views == 0 {
        0.0
    } else {
        let (ct, _) = generate_head_phantom(&cfg.phantom_params()?)?;
        let geom = cfg.geometry()?;
        let traj = make_test_trajectory(b.projector_views)?;
        let step = if cfg.trajectory.step_mm > 0.0 { cfg.trajectory.step_mm } else { default_step(&ct) };
        let t = Instant::now();
        for pose in traj.poses() {
            project_view(&ct, &geom, pose, step)?;
        }
        b.projector_views as f64 / t.elapsed().as_secs_f64()
    };

    Ok(BenchReport {
        fps_infer,
        views_per_s_projector,
        hardware: hardware_description(),
        threads: rayon::current_num_threads(),
        input_size: b.size,
        repetitions: b.repetitions,
        warmup: b.warmup,
        preset: cfg.model.preset.clone(),
    })
}

pub fn cmd_bench(cfg: &RunConfig) -> Result<(PathBuf, BenchReport), CliError> {
    let report = run_bench(cfg)?;
    let path = Layout::new(cfg).bench().join("bench.txt");
    write_file(&path, report.to_text(&run_meta(cfg)).as_bytes())?;
    Ok((path, report))
}
