//! End-to-end acceptance suite. Runs every criterion in order, prints one
//! PASS/FAIL line per criterion and exits non-zero if any failed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gradcore::{grad_check, Graph, Tensor, Var};
use projtrans::dataset::Split;
use projtrans::geometry::{BeamMode, ConeBeamGeometry, Ray, ViewPose};
use projtrans::metrics::{masked_mae_percent, masked_psnr, ssim, MaeBasis, SsimRange, PSNR_CAP_DB};
use projtrans::model::{
    count_params, ArchConfig, Discriminator, DiscriminatorConfig, FeatureNet, FeatureNetConfig, FinalActivation,
    Generator, GeneratorPreset,
};
use projtrans::objective::{
    discriminator_loss, feature_matching_loss, generator_gan_loss, label_weight_map, sobel_gradient_map, total_loss,
    LossConfig, WeightMap,
};
use projtrans::phantom::{generate_analytic_phantom, AnalyticShape, Grid};
use projtrans::projector::{line_integral, project_view, ProjectionImage};
use projtrans::train::{loss_log_csv, mean_masked_mae, LossRecord, TrainSample, Trainer};
use projtrans::volume::Volume;
use projtrans_cli::bench::cmd_bench;
use projtrans_cli::pipeline::{self, load_prepared, training_samples, Layout, PER_ANGLE_CSV};
use projtrans_cli::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- projector

fn ellipsoid_chord(center: [f64; 3], radii: [f64; 3], ray: &Ray) -> f64 {
    let (mut a, mut b, mut c) = (0.0, 0.0, -1.0);
    for i in 0..3 {
        let o = (ray.origin_mm[i] - center[i]) / radii[i];
        let d = ray.direction[i] / radii[i];
        a += d * d;
        b += 2.0 * o * d;
        c += o * o;
    }
    let disc = b * b - 4.0 * a * c;
    if disc <= 0.0 {
        0.0
    } else {
        disc.sqrt() / a
    }
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn max_abs(a: &[f32]) -> f64 {
    a.iter().map(|v| v.abs() as f64).fold(0.0, f64::max)
}

fn max_rel_diff(a: &ProjectionImage, b: &ProjectionImage) -> f64 {
    let diff: Vec<f32> = a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect();
    max_abs(&diff) / max_abs(&a.data).max(max_abs(&b.data))
}

fn chord_errors(center: [f64; 3], radii: [f64; 3], dims: [usize; 3], rays: &[Ray]) -> Result<f64, String> {
    let grid = Grid::centered(dims, [0.25; 3]);
    let vol = ok(generate_analytic_phantom(AnalyticShape::Ellipsoid { radii_mm: radii }, center, 1.0, &grid))?;
    let step = vol.min_spacing() / 4.0;
    let mut worst = 0.0f64;
    for ray in rays {
        let expected = ellipsoid_chord(center, radii, ray);
        ensure!(expected > 5.0, "ray misses the shape");
        worst = worst.max(rel(ok(line_integral(&vol, ray, step))?, expected));
    }
    Ok(worst)
}

fn c1_projector() -> Outcome {
    let t0 = Instant::now();
    let sphere = chord_errors(
        [0.0; 3],
        [20.0; 3],
        [176; 3],
        &[
            Ray { origin_mm: [-100.0, 0.0, 0.0], direction: [1.0, 0.0, 0.0] },
            Ray { origin_mm: [-100.0, 12.0, 0.0], direction: [1.0, 0.0, 0.0] },
            Ray { origin_mm: [-60.0, -40.0, 10.0], direction: unit([3.0, 2.0, -0.4]) },
        ],
    )?;
    let ellipsoid = chord_errors(
        [3.0, -2.0, 1.5],
        [24.0, 16.0, 12.0],
        [224, 160, 128],
        &[
            Ray { origin_mm: [-80.0, -2.0, 1.5], direction: [1.0, 0.0, 0.0] },
            Ray { origin_mm: [3.0, 4.0, -50.0], direction: [0.0, 0.0, 1.0] },
            Ray { origin_mm: [-40.0, -30.0, -5.0], direction: unit([1.0, 0.8, 0.15]) },
            Ray { origin_mm: [30.0, 25.0, 20.0], direction: unit([-1.1, -0.9, -0.6]) },
        ],
    )?;
    ensure!(sphere < 0.005, "sphere chord error {sphere:.2e}");
    ensure!(ellipsoid < 0.005, "ellipsoid chord error {ellipsoid:.2e}");

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = ConeBeamGeometry { det_rows: 21, det_cols: 21, det_spacing_mm: 4.0, ..Default::default() };
    let mut linearity = 0.0f64;
    for _ in 0..4 {
        let mut vol = || {
            let data = (0..6 * 7 * 5).map(|_| rng.gen_range(0.0..1.0)).collect();
            Volume::new([6, 7, 5], [3.0, 2.5, 3.5], [-7.5, -7.5, -7.0], data)
        };
        let (f, h) = (ok(vol())?, ok(vol())?);
        let (a, b) = (rng.gen_range(-2.0..2.0f32), rng.gen_range(-2.0..2.0f32));
        let mix: Vec<f32> = f.data().iter().zip(h.data()).map(|(x, y)| a * x + b * y).collect();
        let mix = ok(Volume::new(f.dims(), f.spacing_mm(), f.origin_mm(), mix))?;
        let pose = ok(ViewPose::new(rng.gen_range(0.0..360.0), rng.gen_range(-30.0..30.0)))?;
        let (pf, ph, pm) =
            (ok(project_view(&f, &g, &pose, 0.7))?, ok(project_view(&h, &g, &pose, 0.7))?, ok(project_view(&mix, &g, &pose, 0.7))?);
        let diff: Vec<f32> = pf.data.iter().zip(&ph.data).zip(&pm.data).map(|((x, y), m)| a * x + b * y - m).collect();
        linearity = linearity.max(max_abs(&diff) / max_abs(&pm.data).max(1e-12));
    }
    ensure!(linearity <= 1e-5, "linearity error {linearity:.2e}");

    let grid = Grid::centered([48; 3], [1.0; 3]);
    let mut vol = ok(generate_analytic_phantom(
        AnalyticShape::Ellipsoid { radii_mm: [6.0, 4.0, 5.0] },
        [10.0, 6.0, -3.0],
        1.0,
        &grid,
    ))?;
    let second = ok(generate_analytic_phantom(AnalyticShape::Sphere { radius_mm: 5.0 }, [-8.0, -4.0, 4.0], 2.0, &grid))?;
    vol.data_mut().iter_mut().zip(second.data()).for_each(|(a, b)| *a += b);
    let step = vol.min_spacing() / 2.0;
    let mut geom = ConeBeamGeometry { det_rows: 33, det_cols: 33, det_spacing_mm: 1.5, ..Default::default() };
    let (mut parallel, mut cone) = (0.0f64, f64::INFINITY);
    for phi in [0.0, 30.0, 117.0] {
        let (a, b) = (ok(ViewPose::new(phi, 0.0))?, ok(ViewPose::new(phi + 180.0, 0.0))?);
        for mode in [BeamMode::Parallel, BeamMode::Cone] {
            geom.beam_mode = mode;
            let d = max_rel_diff(&ok(project_view(&vol, &geom, &a, step))?.mirrored(), &ok(project_view(&vol, &geom, &b, step))?);
            match mode {
                BeamMode::Parallel => parallel = parallel.max(d),
                BeamMode::Cone => cone = cone.min(d),
            }
        }
    }
    ensure!(parallel < 1e-3, "parallel opposition mismatch {parallel:.2e}");
    ensure!(cone > 1e-3, "cone opposition unexpectedly mirrors ({cone:.2e})");
    let secs = t0.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "runtime {secs:.1} s");
    Ok(format!(
        "chord err sphere {sphere:.1e} ellipsoid {ellipsoid:.1e}, linearity {linearity:.1e}, \
         parallel mirror {parallel:.1e}, cone mirror {cone:.1e}, {secs:.1} s"
    ))
}

// ---------------------------------------------------------------- gradients

fn c2_gradients() -> Outcome {
    const TOL: f64 = 1e-5;
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    let mut count = 0;
    let mut check = |name: &str, shapes: &[Vec<usize>], op: &dyn Fn(&mut Graph<f64>, &[Var]) -> gradcore::Result<Var>| {
        for seed in 0..3 {
            let r = ok(grad_check(op, shapes, seed, 1e-6, TOL))?;
            worst = worst.max(r.max_rel_error);
            count += 1;
            ensure!(r.passed, "{name} seed {seed}: {:.2e}", r.max_rel_error);
        }
        Ok(())
    };
    let s = vec![2, 3, 4];
    let two = [s.clone(), s.clone()];
    check("add", &two, &|g, v| g.add(v[0], v[1]))?;
    check("sub", &two, &|g, v| g.sub(v[0], v[1]))?;
    check("mul", &two, &|g, v| g.mul(v[0], v[1]))?;
    check("abs_diff", &two, &|g, v| g.abs_diff(v[0], v[1]))?;
    check("l1_diff", &two, &|g, v| g.l1_diff(v[0], v[1]))?;
    check("scale", &[s.clone()], &|g, v| Ok(g.scale(v[0], -1.7)))?;
    check("relu", &[s.clone()], &|g, v| Ok(g.relu(v[0])))?;
    check("leaky_relu", &[s.clone()], &|g, v| Ok(g.leaky_relu(v[0], 0.2)))?;
    check("tanh", &[s.clone()], &|g, v| Ok(g.tanh(v[0])))?;
    check("sum", &[s.clone()], &|g, v| Ok(g.sum(v[0])))?;
    check("mean", &[s.clone()], &|g, v| Ok(g.mean(v[0])))?;
    let map: Vec<f64> = (0..12).map(|i| 0.1 * i as f64).collect();
    check("mul_map", &[vec![2, 3, 3, 4]], &|g, v| g.mul_map(v[0], &map))?;
    for t in [0.0, 0.3, 1.0] {
        check("bce_with_logits", &[vec![1, 1, 5, 5]], &|g, v| {
            let x = g.scale(v[0], 4.0);
            let b = g.bce_with_logits(x, t);
            Ok(g.mean(b))
        })?;
    }
    check("concat", &[vec![1, 2, 3, 3], vec![1, 1, 3, 3]], &|g, v| g.concat_channels(v[0], v[1]))?;
    check("conv2d", &[vec![2, 2, 8, 8], vec![2, 2, 4, 4], vec![2]], &|g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1))?;
    check("conv2d 7x7", &[vec![1, 1, 7, 7], vec![2, 1, 7, 7]], &|g, v| g.conv2d(v[0], v[1], None, 1, 3))?;
    check("conv_transpose2d", &[vec![1, 3, 4, 4], vec![3, 2, 4, 4], vec![2]], &|g, v| {
        g.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1)
    })?;
    check("instance_norm", &[vec![2, 3, 4, 5], vec![3], vec![3]], &|g, v| g.instance_norm(v[0], v[1], v[2]))?;

    // composite: a small generator with a residual block at every level
    let arch = ArchConfig {
        levels: 2,
        channels: vec![3, 4],
        resblocks: vec![1, 1],
        outer_kernel: 3,
        kernel: 3,
        up_kernel: 4,
        final_activation: FinalActivation::Linear,
    };
    let gen = ok(Generator::<f64>::new(&arch, 11))?;
    check("generator", &[vec![1, 1, 8, 8]], &|g, v| {
        let p = gen.params.bind(g, false);
        gen.forward(g, &p, v[0]).map_err(|e| gradcore::GradError::Shape(e.to_string()))
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut random = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>())
    };
    let mut adjoint = 0.0f64;
    for &(cin, cout, size, k, stride, pad) in &[(2, 3, 8, 4, 2, 1), (3, 2, 7, 3, 1, 1), (1, 4, 9, 3, 2, 1)] {
        let mut g = Graph::<f64>::new();
        let x = g.constant(ok(random(&[1, cin, size, size]))?);
        let w = g.constant(ok(random(&[cout, cin, k, k]))?);
        let ax = ok(g.conv2d(x, w, None, stride, pad))?;
        let y = g.constant(ok(random(g.shape(ax)))?);
        let aty = ok(g.conv_transpose2d(y, w, None, stride, pad))?;
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let lhs = dot(g.value(ax).data(), g.value(y).data());
        let rhs = dot(g.value(x).data(), g.value(aty).data());
        adjoint = adjoint.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
    }
    ensure!(adjoint < 1e-5, "adjoint mismatch {adjoint:.2e}");
    let secs = t0.elapsed().as_secs_f64();
    ensure!(secs < 120.0, "runtime {secs:.1} s");
    Ok(format!("{count} checks, max rel err {worst:.1e}, adjoint {adjoint:.1e}, {secs:.1} s"))
}

// ---------------------------------------------------------------- metrics

fn naive_ssim(x: &[f32], y: &[f32], rows: usize, cols: usize, range: f64) -> f64 {
    let (k, sigma) = (11usize, 1.5f64);
    let mut kernel: Vec<f64> = (0..k * k)
        .map(|i| {
            let (di, dj) = ((i / k) as f64 - 5.0, (i % k) as f64 - 5.0);
            (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= s);
    let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
    let (mut total, mut count) = (0.0, 0);
    for r0 in 0..=rows - k {
        for c0 in 0..=cols - k {
            let px = |i: usize| (r0 + i / k) * cols + c0 + i % k;
            let mx: f64 = (0..k * k).map(|i| kernel[i] * x[px(i)] as f64).sum();
            let my: f64 = (0..k * k).map(|i| kernel[i] * y[px(i)] as f64).sum();
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..k * k {
                let (dx, dy) = (x[px(i)] as f64 - mx, y[px(i)] as f64 - my);
                vx += kernel[i] * dx * dx;
                vy += kernel[i] * dy * dy;
                cxy += kernel[i] * dx * dy;
            }
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

fn c3_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (rows, cols) = (rng.gen_range(11..24), rng.gen_range(11..24));
        let l: Vec<f32> = (0..rows * cols).map(|_| rng.gen_range(0.0..10.0)).collect();
        let (a, b) = (rng.gen_range(0.8..1.2f32), rng.gen_range(-1.0..1.0f32));
        let g: Vec<f32> = l.iter().map(|v| a * v + b + rng.gen_range(-0.5..0.5f32)).collect();
        let range = (l.iter().copied().fold(f32::MIN, f32::max) - l.iter().copied().fold(f32::MAX, f32::min)) as f64;
        worst = worst.max((ok(ssim(&g, &l, rows, cols, SsimRange::Label))? - naive_ssim(&g, &l, rows, cols, range)).abs());
    }
    ensure!(worst < 1e-6, "ssim vs naive {worst:.2e}");
    let x: Vec<f32> = (0..16 * 20).map(|_| rng.gen_range(0.0..10.0)).collect();
    ensure!((ok(ssim(&x, &x, 16, 20, SsimRange::Label))? - 1.0).abs() < 1e-9, "ssim(X, X) != 1");

    let l = [0.0f32, 1.0, 3.0, 5.0];
    let g = [9.0f32, 2.0, 3.0, 4.0];
    ensure!(ok(masked_mae_percent(&g, &l, MaeBasis::Range))? == 2.0 / 3.0 / 4.0 * 100.0, "hand-computed MAE");
    ensure!(ok(masked_psnr(&g, &l))? == 10.0 * (25.0f64 / (2.0 / 3.0)).log10(), "hand-computed PSNR");
    let l = [0.0f32, 2.0, 4.0, 10.0, 0.0, 6.0];
    let g: Vec<f32> = l.iter().map(|v| if *v != 0.0 { v + 0.08 } else { 123.0 }).collect();
    ensure!((ok(masked_mae_percent(&g, &l, MaeBasis::Range))? - 1.0).abs() < 1e-5, "1% range MAE");
    let g: Vec<f32> = l.iter().map(|v| if *v != 0.0 { v + 1.0 } else { -5.0 }).collect();
    ensure!((ok(masked_psnr(&g, &l))? - 20.0).abs() < 1e-12, "20 dB PSNR");
    ensure!(ok(masked_mae_percent(&l, &l, MaeBasis::Range))? == 0.0, "identity MAE");
    ensure!(ok(masked_psnr(&l, &l))? == PSNR_CAP_DB, "identity PSNR sentinel");
    ensure!(masked_mae_percent(&[0.0; 4], &[0.0; 4], MaeBasis::Range).is_err(), "empty mask accepted");
    Ok(format!("ssim vs naive max diff {worst:.1e} over 20 pairs; closed forms exact"))
}

// ---------------------------------------------------------------- loss

fn c4_loss() -> Outcome {
    const N: usize = 64;
    let img = |seed: u64| -> Vec<f64> {
        (0..N * N)
            .map(|i| {
                let (r, c) = ((i / N) as f64, (i % N) as f64);
                let blob = if (r - 32.0).powi(2) + (c - 30.0).powi(2) < 300.0 { 1.0 } else { 0.0 };
                blob + 0.1 * ((i as u64 * 7 + seed * 13) % 17) as f64 / 17.0
            })
            .collect()
    };
    let mut d = ok(Discriminator::<f64>::new(&DiscriminatorConfig { base_channels: 8, ..Default::default() }, 3))?;
    let net = ok(FeatureNet::<f64>::new(&FeatureNetConfig::default()))?;
    let label32: Vec<f32> = img(2).iter().map(|v| *v as f32).collect();
    let off = ok(label_weight_map(&label32, N, N, &LossConfig { edge_weighting: false, ..Default::default() }))?;
    let zero = ok(label_weight_map(&label32, N, N, &LossConfig::default()))?.scaled(0.0);

    // (total G loss, D loss, D parameter gradients)
    let eval = |d: &Discriminator<f64>, map: Option<&WeightMap>| -> Result<(f64, f64, Vec<f64>), String> {
        let mut g = Graph::new();
        let dv = d.params.bind(&mut g, true);
        let fv = net.bind(&mut g);
        let t = |g: &mut Graph<f64>, s| Ok::<_, String>(g.constant(ok(Tensor::new([1, 1, N, N], img(s)))?));
        let (input, label, fake) = (t(&mut g, 1)?, t(&mut g, 2)?, t(&mut g, 3)?);
        let gan = ok(generator_gan_loss(&mut g, d, &dv, input, fake, map))?;
        let fm = ok(feature_matching_loss(&mut g, &net, &fv, label, fake, map, &[1.0; 4]))?;
        let total = ok(total_loss(&mut g, gan, fm))?;
        let dl = ok(discriminator_loss(&mut g, d, &dv, input, label, fake, map))?;
        ok(g.backward(dl))?;
        let grads = dv.iter().flat_map(|v| g.grad(*v).map(<[f64]>::to_vec).unwrap_or_default()).collect();
        Ok((g.value(total).item(), g.value(dl).item(), grads))
    };
    let (weighted_off, d_off, _) = eval(&d, Some(&off))?;
    let (unweighted, d_unw, _) = eval(&d, None)?;
    ensure!(weighted_off.to_bits() == unweighted.to_bits(), "total {weighted_off} vs unweighted {unweighted}");
    ensure!(d_off.to_bits() == d_unw.to_bits(), "D loss {d_off} vs unweighted {d_unw}");
    let (t0, d0, grads) = eval(&d, Some(&zero))?;
    ensure!(t0 == 0.0 && d0 == 0.0, "zero map losses {t0}, {d0}");
    ensure!(!grads.is_empty() && grads.iter().all(|v| *v == 0.0), "non-zero gradient under zero map");
    d.zero_all();
    let (_, dz, _) = eval(&d, None)?;
    let err = (dz - 2.0 * std::f64::consts::LN_2).abs();
    ensure!(err < 1e-6, "zero-logit D loss {dz}");
    Ok(format!("off == unweighted bitwise, zero map -> 0 loss and 0 grads, zero-logit D loss err {err:.1e}"))
}

// ---------------------------------------------------------------- training

struct Demo {
    _dir: tempfile::TempDir,
    cfg: RunConfig,
    train: Vec<TrainSample>,
    test: Vec<TrainSample>,
}

fn demo() -> Result<Demo, String> {
    let dir = ok(tempfile::tempdir())?;
    let cfg = ok(RunConfig::demo(&[format!("output_dir={:?}", dir.path().join("demo").display().to_string())]))?;
    ok(pipeline::cmd_phantom(&cfg))?;
    ok(pipeline::cmd_project(&cfg))?;
    ok(pipeline::cmd_prepare(&cfg))?;
    let dataset = ok(load_prepared(&cfg))?;
    let train = ok(training_samples(&dataset))?;
    let test = dataset
        .split(Split::Test)
        .map(|p| Ok(TrainSample::from_paired(p, *ok(dataset.label_stats_for(&p.subject_id))?)))
        .collect::<Result<Vec<_>, String>>()?;
    Ok(Demo { _dir: dir, cfg, train, test })
}

struct Run {
    log: Vec<LossRecord>,
    generator: Generator<f32>,
    initial_mae: f64,
    secs: f64,
}

fn train(demo: &Demo, arch: &ArchConfig, edge_weighting: bool, seed: u64) -> Result<Run, String> {
    let loss = LossConfig { edge_weighting, ..ok(demo.cfg.loss_config())? };
    let mut cfg = ok(demo.cfg.trainer_config())?;
    cfg.seed = seed;
    let t0 = Instant::now();
    let mut trainer = ok(Trainer::new(arch, &loss, &cfg))?;
    let initial_mae = ok(mean_masked_mae(&trainer.generator, &demo.train))?;
    let log = ok(trainer.run(&demo.train, &BTreeMap::new(), |_, _| Ok(())))?;
    Ok(Run { log, generator: trainer.generator, initial_mae, secs: t0.elapsed().as_secs_f64() })
}

/// Median over views of the mean absolute error on edge pixels (normalized
/// label gradient at or above the threshold), as a percentage of the
/// masked label range.
fn edge_mae(generator: &Generator<f32>, samples: &[TrainSample], threshold: f64) -> Result<f64, String> {
    let mut per_view = Vec::new();
    for s in samples {
        let out = ok(projtrans::infer::infer(generator, &s.input, s.rows, s.cols, Some(&s.label_stats)))?;
        let grad = ok(sobel_gradient_map(&s.label_raw, s.rows, s.cols))?;
        let masked = |i: &usize| s.label_raw[*i] != 0.0;
        let (lo, hi) = (0..s.label_raw.len())
            .filter(masked)
            .fold((f32::MAX, f32::MIN), |(lo, hi), i| (lo.min(s.label_raw[i]), hi.max(s.label_raw[i])));
        let edges: Vec<usize> = (0..grad.len()).filter(|i| masked(i) && grad[*i] as f64 >= threshold).collect();
        if edges.is_empty() || hi <= lo {
            continue;
        }
        let mae = edges.iter().map(|&i| (out[i] - s.label_raw[i]).abs() as f64).sum::<f64>() / edges.len() as f64;
        per_view.push(mae / (hi - lo) as f64 * 100.0);
    }
    ensure!(!per_view.is_empty(), "no edge pixels");
    per_view.sort_by(f64::total_cmp);
    Ok(per_view[per_view.len() / 2])
}

fn finite(log: &[LossRecord]) -> bool {
    log.iter().all(|r| [r.loss_d, r.loss_g_gan, r.loss_g_fm, r.loss_total].iter().all(|v| v.is_finite()))
}

fn c5_overfit(demo: &Demo, first: &Run) -> Outcome {
    let arch = ok(demo.cfg.arch())?;
    let iterations = first.log.len();
    ensure!(iterations == 200, "{iterations} iterations");
    ensure!(demo.train.len() == 4, "{} training pairs", demo.train.len());
    let final_mae = ok(mean_masked_mae(&first.generator, &demo.train))?;
    let reduction = 1.0 - final_mae / first.initial_mae;
    let repeat = train(demo, &arch, true, demo.cfg.seed)?;
    let identical = loss_log_csv(&first.log) == loss_log_csv(&repeat.log);
    ensure!(reduction >= 0.5, "masked MAE {:.2}% -> {final_mae:.2}% ({:.0}% reduction)", first.initial_mae, reduction * 100.0);
    ensure!(identical, "repeat loss log differs");
    ensure!(first.secs < 600.0, "runtime {:.0} s", first.secs);
    Ok(format!(
        "masked MAE {:.2}% -> {final_mae:.2}% ({:.0}% reduction), repeat identical, {:.0} s",
        first.initial_mae,
        reduction * 100.0,
        first.secs
    ))
}

fn c6_edge_weighting(demo: &Demo, first: &Run) -> Outcome {
    let arch = ok(demo.cfg.arch())?;
    let threshold = ok(demo.cfg.loss_config())?.edge_threshold;
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in [demo.cfg.seed, demo.cfg.seed + 1, demo.cfg.seed + 2] {
        let on = if seed == demo.cfg.seed { None } else { Some(train(demo, &arch, true, seed)?) };
        let on = on.as_ref().unwrap_or(first);
        let off = train(demo, &arch, false, seed)?;
        let (e_on, e_off) = (edge_mae(&on.generator, &demo.test, threshold)?, edge_mae(&off.generator, &demo.test, threshold)?);
        wins += usize::from(e_on < e_off);
        rows.push(format!("seed {seed}: on {e_on:.2}% off {e_off:.2}%"));
    }
    let detail = format!("held-out edge MAE {}", rows.join("; "));
    ensure!(wins >= 2, "weighting better in {wins}/3 seeds; {detail}");
    Ok(format!("weighting better in {wins}/3 seeds; {detail}"))
}

fn c7_presets(demo: &Demo, proposed_run: &Run) -> Outcome {
    let (r, p) = (GeneratorPreset::reference().arch, GeneratorPreset::proposed().arch);
    let strip = |a: &ArchConfig| ArchConfig { channels: Vec::new(), resblocks: Vec::new(), ..a.clone() };
    ensure!(strip(&r) == strip(&p), "presets differ beyond channel/resblock vectors");
    ensure!(r.channels != p.channels || r.resblocks != p.resblocks, "presets are identical");
    let count = |a: &ArchConfig| ok(Generator::<f32>::new(a, 0)).map(|g| count_params(&g.params));
    let (nr, np) = (count(&r)?, count(&p)?);
    let spread = (nr as f64 - np as f64).abs() / nr.max(np) as f64;
    ensure!(spread <= 0.15, "parameter counts {nr} vs {np}");
    ensure!(proposed_run.log.len() == 200 && finite(&proposed_run.log), "proposed preset diverged");
    let reference_run = train(demo, &r, true, demo.cfg.seed)?;
    ensure!(reference_run.log.len() == 200 && finite(&reference_run.log), "reference preset diverged");
    Ok(format!("params reference {nr} proposed {np} ({:.1}% apart); both 200 iterations finite", spread * 100.0))
}

// ---------------------------------------------------------------- pipeline

fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if let Ok(bytes) = fs::read(&p) {
                files.push((p.strip_prefix(root).unwrap_or(&p).to_path_buf(), bytes));
            }
        }
    }
    files.sort();
    files
}

fn c8_pipeline() -> Outcome {
    let dir = ok(tempfile::tempdir())?;
    let out = dir.path().join("run");
    let cfg = ok(RunConfig::demo(&[
        format!("output_dir={:?}", out.display().to_string()),
        "trainer.max_iterations=6".into(),
        "trainer.epochs=2".into(),
        "trainer.checkpoint_every=1".into(),
    ]))?;
    ok(pipeline::run_all(&cfg))?;
    let first = snapshot(&out);
    ok(fs::remove_dir_all(&out))?;
    ok(pipeline::run_all(&cfg))?;
    let second = snapshot(&out);
    ensure!(first.len() > 10, "only {} artifacts", first.len());
    if first != second {
        let differing: Vec<String> = first
            .iter()
            .zip(&second)
            .filter(|(a, b)| a != b)
            .map(|(a, _)| a.0.display().to_string())
            .collect();
        return Err(format!("artifacts differ: {differing:?}"));
    }
    let per_angle = ok(fs::read_to_string(Layout::new(&cfg).eval().join(PER_ANGLE_CSV)))?;
    let rows = per_angle.lines().filter(|l| !l.starts_with('#') && !l.starts_with("angle_deg")).count();
    ensure!(rows == cfg.trajectory.test_views, "{rows} per-angle rows for {} test views", cfg.trajectory.test_views);
    let header: String = per_angle.lines().take_while(|l| l.starts_with('#')).collect();
    ensure!(header.contains("RAO") && header.contains("LAO"), "per-angle header lacks the RAO/LAO convention");
    Ok(format!("{} artifacts byte-identical across runs, {rows} per-angle rows", first.len()))
}

fn c9_bench() -> Outcome {
    let dir = ok(tempfile::tempdir())?;
    let cfg = ok(RunConfig::demo(&[format!("output_dir={:?}", dir.path().display().to_string())]))?;
    let (path, report) = ok(cmd_bench(&cfg))?;
    let text = ok(fs::read_to_string(path))?;
    for key in ["fps_infer=", "views_per_s_projector=", "hardware=", "threads="] {
        ensure!(text.lines().any(|l| l.starts_with(key) && l.len() > key.len()), "report lacks {key}");
    }
    ensure!(report.fps_infer.is_finite() && report.fps_infer > 0.0, "fps_infer {}", report.fps_infer);
    ensure!(report.views_per_s_projector.is_finite() && report.views_per_s_projector > 0.0, "projector rate");
    Ok(format!(
        "fps_infer {:.1}, views_per_s_projector {:.1}, {} thread(s), {}",
        report.fps_infer, report.views_per_s_projector, report.threads, report.hardware
    ))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        match &outcome {
            Ok(detail) => println!("criterion {n} {name}: PASS ({detail})"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL ({detail})");
            }
        }
    };
    report(1, "projector oracle", c1_projector());
    report(2, "gradient suite", c2_gradients());
    report(3, "metric oracles", c3_metrics());
    report(4, "loss contract", c4_loss());
    match demo().and_then(|d| {
        let arch = ok(d.cfg.arch())?;
        let first = train(&d, &arch, true, d.cfg.seed)?;
        Ok((d, first))
    }) {
        Ok((d, first)) => {
            report(5, "toy overfit", c5_overfit(&d, &first));
            report(6, "edge weighting effect", c6_edge_weighting(&d, &first));
            report(7, "architecture presets", c7_presets(&d, &first));
        }
        Err(e) => {
            for (n, name) in [(5, "toy overfit"), (6, "edge weighting effect"), (7, "architecture presets")] {
                report(n, name, Err(format!("demo run failed: {e}")));
            }
        }
    }
    report(8, "pipeline reproducibility", c8_pipeline());
    report(9, "throughput harness", c9_bench());
    if failed > 0 {
        println!("{failed} of 9 criteria failed");
        std::process::exit(1);
    }
    println!("all 9 criteria passed");
}
