//! Command-line front end for the lane-heading tooling: rasterize vector
//! scenes into heading maps, evaluate prediction batches, check the loss
//! gradient, refine trajectories, and generate synthetic fixtures.
//!
//! Exit codes: 0 success, 1 check failure, 2 input error, 3 I/O error.
//! Every subcommand is deterministic given its inputs, flags, and seed.

mod formats;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use offyaw::geometry::{Point2, Trajectory};
use offyaw::metrics::{evaluate_batch, EvalConfig, PredictionSet};
use offyaw::raster::{rasterize, HeadingRaster, RasterQuery, RasterSpec};
use offyaw::scene::{synth_scene, Scene, SyntheticSpec};
use offyaw::yawloss::{grad_check, refine, LossConfig};

use formats::{
    load_json, load_raster, save_raster, write_bytes, write_json, CliError, CliResult, GtFile,
    SampleFile,
};

#[derive(Parser)]
#[command(name = "offyaw", version, about = "Lane-heading trajectory tooling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene's nearest-lane heading field to a PGM raster.
    Rasterize(RasterizeArgs),
    /// Evaluate a prediction batch and write a report (JSON plus CSV).
    Eval(EvalArgs),
    /// Compare the analytic loss gradient against finite differences.
    Gradcheck(GradcheckArgs),
    /// Descend the yaw loss from an initial prediction set.
    Refine(RefineArgs),
    /// Generate a synthetic scene and optional trajectory fixtures.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RasterizeArgs {
    /// Scene JSON file.
    #[arg(long)]
    scene: PathBuf,
    /// Output PGM path; a JSON sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Cell size in meters per pixel.
    #[arg(long, default_value_t = 0.2)]
    resolution: f64,
}

#[derive(Args)]
struct EvalArgs {
    /// Prediction JSON file (array of samples).
    #[arg(long)]
    preds: PathBuf,
    /// Ground-truth JSON file; defaults to the `gt` field of each sample.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Scene JSON file, shared by every sample in the batch.
    #[arg(long)]
    scene: PathBuf,
    /// Heading raster PGM (with sidecar), shared by every sample.
    #[arg(long)]
    raster: PathBuf,
    /// Report JSON output path; a CSV is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Off-yaw threshold in degrees.
    #[arg(long, default_value_t = 45.0)]
    alpha: f64,
    /// Sample filter: `no-intersections` drops samples whose ground truth
    /// touches intersection or off-map cells.
    #[arg(long)]
    filter: Option<String>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Prediction JSON file.
    #[arg(long)]
    preds: PathBuf,
    /// Heading raster PGM (with sidecar).
    #[arg(long)]
    raster: PathBuf,
    /// Off-yaw threshold in degrees.
    #[arg(long, default_value_t = 45.0)]
    alpha: f64,
    /// Finite-difference step in meters.
    #[arg(long, default_value_t = 1e-4)]
    h: f64,
    /// Relative tolerance.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

#[derive(Args)]
struct RefineArgs {
    /// Prediction JSON file.
    #[arg(long)]
    preds: PathBuf,
    /// Heading raster PGM (with sidecar).
    #[arg(long)]
    raster: PathBuf,
    /// Refined prediction JSON output path.
    #[arg(long)]
    out: PathBuf,
    /// Loss-trace CSV output path.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Off-yaw threshold in degrees.
    #[arg(long, default_value_t = 45.0)]
    alpha: f64,
    /// Weight of the squared-displacement anchor to the initial points.
    #[arg(long, default_value_t = 0.0)]
    anchor_weight: f64,
    /// Maximum descent steps.
    #[arg(long, default_value_t = 500)]
    steps: usize,
    /// Initial line-search step size.
    #[arg(long, default_value_t = 10.0)]
    lr: f64,
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic scene spec JSON ({"kind": "straight" | "arc" | "four_way", ...}).
    #[arg(long)]
    spec: PathBuf,
    /// Scene JSON output path.
    #[arg(long)]
    out: PathBuf,
    /// Optional prediction fixture output path.
    #[arg(long)]
    preds_out: Option<PathBuf>,
    /// RNG seed for the fixture trajectories.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of fixture samples.
    #[arg(long, default_value_t = 4)]
    samples: usize,
    /// Modes per fixture sample.
    #[arg(long, default_value_t = 3)]
    modes: usize,
    /// Prediction steps per mode.
    #[arg(long, default_value_t = 12)]
    steps: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Rasterize(args) => cmd_rasterize(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Gradcheck(args) => cmd_gradcheck(&args),
        Command::Refine(args) => cmd_refine(&args),
        Command::Synth(args) => cmd_synth(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.exit(),
    }
}

fn cmd_rasterize(args: &RasterizeArgs) -> CliResult<()> {
    let scene: Scene = load_json(&args.scene)?;
    let mut spec = RasterSpec::with_defaults(scene.ego);
    spec.resolution = args.resolution;
    spec.validate()
        .map_err(|e| CliError::input(format!("invalid raster spec: {e}")))?;
    let start = Instant::now();
    let raster = rasterize(&scene, &spec)
        .map_err(|e| CliError::input(format!("{}: {e}", args.scene.display())))?;
    let elapsed = start.elapsed().as_secs_f64();
    save_raster(&raster, &args.out)?;
    println!(
        "rasterized {}x{} cells ({} total) in {elapsed:.3} s",
        spec.width(),
        spec.height(),
        spec.width() * spec.height()
    );
    Ok(())
}

fn load_batch(args: &EvalArgs) -> CliResult<(Vec<PredictionSet>, Vec<Trajectory>)> {
    let sample_files: Vec<SampleFile> = load_json(&args.preds)?;
    if sample_files.is_empty() {
        return Err(CliError::input(format!(
            "{}: empty prediction batch",
            args.preds.display()
        )));
    }
    let mut samples = Vec::with_capacity(sample_files.len());
    let mut gts = Vec::with_capacity(sample_files.len());
    if let Some(gt_path) = &args.gt {
        let gt_file: GtFile = load_json(gt_path)?;
        if gt_file.trajectories.len() != sample_files.len() {
            return Err(CliError::input(format!(
                "{}: {} ground truths for {} samples",
                gt_path.display(),
                gt_file.trajectories.len(),
                sample_files.len()
            )));
        }
        for (i, (sample, points)) in sample_files.iter().zip(&gt_file.trajectories).enumerate() {
            samples.push(sample.to_prediction_set(&args.preds, i)?);
            gts.push(Trajectory::new(points.clone(), gt_file.dt).map_err(|e| {
                CliError::input(format!("{}: sample {i}: {e}", gt_path.display()))
            })?);
        }
    } else {
        for (i, sample) in sample_files.iter().enumerate() {
            let points = sample.gt.clone().ok_or_else(|| {
                CliError::input(format!(
                    "{}: sample {i} has no gt field and no --gt file was given",
                    args.preds.display()
                ))
            })?;
            samples.push(sample.to_prediction_set(&args.preds, i)?);
            gts.push(Trajectory::new(points, sample.dt).map_err(|e| {
                CliError::input(format!("{}: sample {i}: {e}", args.preds.display()))
            })?);
        }
    }
    Ok((samples, gts))
}

/// True when any ground-truth point lands on an intersection or off-map
/// cell of the raster.
fn gt_touches_masked(gt: &Trajectory, preds: &PredictionSet, raster: &HeadingRaster) -> bool {
    gt.points.iter().any(|&p| {
        matches!(
            raster.query(preds.ego.local_to_global(p)),
            RasterQuery::Intersection | RasterQuery::OffMap
        )
    })
}

fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    let scene: Scene = load_json(&args.scene)?;
    let raster = load_raster(&args.raster)?;
    let (mut samples, mut gts) = load_batch(args)?;

    match args.filter.as_deref() {
        None => {}
        Some("no-intersections") => {
            let keep: Vec<bool> = samples
                .iter()
                .zip(&gts)
                .map(|(s, gt)| !gt_touches_masked(gt, s, &raster))
                .collect();
            let dropped = keep.iter().filter(|&&k| !k).count();
            let mut it = keep.iter();
            samples.retain(|_| *it.next().unwrap());
            let mut it = keep.iter();
            gts.retain(|_| *it.next().unwrap());
            println!("filter no-intersections dropped {dropped} samples");
        }
        Some(other) => {
            return Err(CliError::input(format!("unknown filter {other:?}")));
        }
    }
    if samples.is_empty() {
        return Err(CliError::input("no samples left after filtering"));
    }

    let config = EvalConfig {
        alpha_deg: args.alpha,
        ..EvalConfig::default()
    };
    let scenes = vec![scene; samples.len()];
    let rasters = vec![raster; samples.len()];
    let report = evaluate_batch(&samples, &gts, &scenes, &rasters, &config)
        .map_err(|e| CliError::input(format!("{}: {e}", args.preds.display())))?;

    write_json(&args.out, &report)?;
    write_bytes(&args.out.with_extension("csv"), report.to_csv().as_bytes())?;

    let agg = &report.aggregate;
    let mut line = format!("samples {}", report.num_samples);
    for k in &agg.k_metrics {
        line.push_str(&format!(
            "  minADE_{} {:.4} minFDE_{} {:.4} miss_{} {:.4}",
            k.k, k.min_ade, k.k, k.min_fde, k.k, k.miss_rate
        ));
    }
    line.push_str(&format!(
        "  off_road {:.4} off_yaw_rad {:.6}",
        agg.off_road_rate, agg.off_yaw_rate_rad
    ));
    println!("{line}");
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> CliResult<()> {
    let raster = load_raster(&args.raster)?;
    let sample_files: Vec<SampleFile> = load_json(&args.preds)?;
    let cfg = LossConfig {
        alpha_deg: args.alpha,
        ..LossConfig::default()
    };
    let mut checked = 0usize;
    let mut passed = 0usize;
    let mut excluded = 0usize;
    let mut failures = 0usize;
    for (i, sample) in sample_files.iter().enumerate() {
        let preds = sample.to_prediction_set(&args.preds, i)?;
        let report = grad_check(&preds, &raster, &cfg, args.h, args.tol)
            .map_err(|e| CliError::input(format!("{}: sample {i}: {e}", args.preds.display())))?;
        checked += report.checked;
        passed += report.passed;
        excluded += report.excluded();
        failures += report.failures.len();
        for f in report.failures.iter().take(5) {
            eprintln!(
                "sample {i} mode {} point {} axis {}: analytic {:.6e} numeric {:.6e} rel {:.3e}",
                f.mode, f.point, f.axis, f.analytic, f.numeric, f.rel_error
            );
        }
    }
    println!("{passed}/{checked} passed, {excluded} excluded");
    if failures > 0 {
        return Err(CliError::check(format!(
            "{failures} gradient coordinates outside tolerance"
        )));
    }
    Ok(())
}

fn cmd_refine(args: &RefineArgs) -> CliResult<()> {
    let raster = load_raster(&args.raster)?;
    let sample_files: Vec<SampleFile> = load_json(&args.preds)?;
    let cfg = LossConfig {
        alpha_deg: args.alpha,
        ..LossConfig::default()
    };
    let mut refined_files = Vec::with_capacity(sample_files.len());
    let mut trace_csv = String::from("sample,step,total,yaw,anchor\n");
    for (i, sample) in sample_files.iter().enumerate() {
        let preds = sample.to_prediction_set(&args.preds, i)?;
        let result = refine(
            &preds,
            &raster,
            &cfg,
            args.anchor_weight,
            args.steps,
            args.lr,
        )
        .map_err(|e| CliError::input(format!("{}: sample {i}: {e}", args.preds.display())))?;
        let initial = result.trace.first().map_or(0.0, |r| r.yaw);
        let last = result.trace.last().map_or(0.0, |r| r.yaw);
        let ratio = if initial > 0.0 { last / initial } else { 0.0 };
        println!(
            "sample {i}: yaw loss {initial:.6} -> {last:.6} (ratio {ratio:.4}) in {} steps",
            result.trace.len().saturating_sub(1)
        );
        for row in &result.trace {
            trace_csv.push_str(&format!(
                "{i},{},{},{},{}\n",
                row.step, row.total, row.yaw, row.anchor
            ));
        }
        refined_files.push(SampleFile::from_prediction_set(&result.refined, None));
    }
    write_json(&args.out, &refined_files)?;
    if let Some(trace_path) = &args.trace {
        write_bytes(trace_path, trace_csv.as_bytes())?;
    }
    Ok(())
}

/// Fixture trajectories: a forward-drifting random walk from the origin
/// with 2 m steps, plus a noisy copy of the first mode as ground truth.
fn synth_sample(rng: &mut ChaCha20Rng, scene: &Scene, modes: usize, steps: usize) -> SampleFile {
    let mut mode_files = Vec::with_capacity(modes);
    let mut weights = Vec::with_capacity(modes);
    for _ in 0..modes {
        let mut heading: f64 = rng.gen_range(-60.0..60.0);
        let mut p = Point2::new(0.0, 0.0);
        let mut points = vec![p];
        for _ in 0..steps {
            heading += rng.gen_range(-20.0..20.0);
            let rad = heading.to_radians();
            p = Point2::new(p.x + 2.0 * rad.sin(), p.y + 2.0 * rad.cos());
            points.push(p);
        }
        mode_files.push(points);
        weights.push(rng.gen_range(0.1..1.0));
    }
    let total: f64 = weights.iter().sum();
    let gt = mode_files[0]
        .iter()
        .map(|&p| Point2::new(p.x + rng.gen_range(-0.5..0.5), p.y + rng.gen_range(-0.5..0.5)))
        .collect();
    SampleFile {
        ego: scene.ego,
        dt: formats::default_dt_value(),
        modes: mode_files
            .into_iter()
            .zip(weights)
            .map(|(points, w)| formats::ModeFile {
                points,
                probability: w / total,
            })
            .collect(),
        gt: Some(gt),
    }
}

fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    let spec: SyntheticSpec = load_json(&args.spec)?;
    let scene = synth_scene(&spec)
        .map_err(|e| CliError::input(format!("{}: {e}", args.spec.display())))?;
    write_json(&args.out, &scene)?;
    println!(
        "scene: {} lanes, {} lane points, {} regions",
        scene.lanes.len(),
        scene.total_lane_points(),
        scene.regions.len()
    );
    if let Some(preds_out) = &args.preds_out {
        let mut rng = ChaCha20Rng::seed_from_u64(args.seed);
        let samples: Vec<SampleFile> = (0..args.samples)
            .map(|_| synth_sample(&mut rng, &scene, args.modes, args.steps))
            .collect();
        write_json(preds_out, &samples)?;
        println!(
            "fixtures: {} samples x {} modes x {} steps, seed {}",
            args.samples, args.modes, args.steps, args.seed
        );
    }
    Ok(())
}
