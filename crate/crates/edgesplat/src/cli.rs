//! Command-line surface: scene synthesis, initialization perturbation and
//! fragmentation, training, rendering, geometry-cue edge detection, and
//! evaluation.
//!
//! Options come from an optional JSON config file plus flag overrides
//! (defaults < file < flags); the global `--seed` flag takes precedence over
//! a seed in the file. Exit codes: 0 on success, 2 on contract violations
//! (including argument errors), 3 on numerical aborts.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use serde::Deserialize;

use crate::detector::{detect_edges, DetectorThresholds, GeometryMaps};
use crate::error::{Error, Result};
use crate::image::ScalarField;
use crate::io::{
    self, fmt_float, load_alpha_png, load_depth, load_normals_png, load_scene_dir,
    load_sketches, save_edge_png, save_scene_dir, save_sketches, PngBitDepth,
};
use crate::metrics::evaluate_sets;
use crate::optim::{train, TrainConfig};
use crate::raster::{reference_render, render};
use crate::scene::{
    fragment_init, generate_synthetic, normalize_scene, perturb_init, transform_set,
    SyntheticShape, SyntheticSpec, DEFAULT_IMAGE_SIZE, DEFAULT_VIEWS,
};
use crate::sketch::DEFAULT_SAMPLE_STEP;

// ---------------------------------------------------------------------------
// Argument grammar
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(
    name = "edgesplat",
    about = "Parametric 3D edge reconstruction from multi-view edge images",
    version
)]
pub struct Cli {
    /// Master RNG seed; overrides any seed in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker thread count. Accepted for interface stability; execution is
    /// single-threaded and any other value only prints a notice.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect edges in geometry maps (alpha/depth/normal) and write an edge PNG.
    Detect(DetectArgs),
    /// Generate a synthetic scene directory with ground truth and rendered views.
    Synth(SynthArgs),
    /// Add Gaussian noise to every control point of a sketch file.
    Perturb(PerturbArgs),
    /// Split each sketch into collinear/de Casteljau parts with independent endpoints.
    Fragment(FragmentArgs),
    /// Optimize sketches against a scene directory's edge images.
    Train(TrainArgs),
    /// Render a sketch file through one camera to a PNG.
    Render(RenderArgs),
    /// Compare predicted sketches against ground truth and write metrics JSON.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Alpha map (8/16-bit grayscale PNG).
    #[arg(long)]
    pub alpha: Option<PathBuf>,
    /// Depth map (.pfm, or 16-bit .png with a {"scale": s} JSON sidecar).
    #[arg(long)]
    pub depth: Option<PathBuf>,
    /// Normal map (16-bit RGB PNG, channels mapped from [-1,1]).
    #[arg(long)]
    pub normal: Option<PathBuf>,
    /// Output edge PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the binary pre-blur union mask here.
    #[arg(long)]
    pub mask_out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alpha_threshold: Option<f64>,
    #[arg(long)]
    pub depth_threshold: Option<f64>,
    #[arg(long)]
    pub normal_threshold: Option<f64>,
    #[arg(long)]
    pub blur_sigma: Option<f64>,
    #[arg(long)]
    pub blur_radius: Option<usize>,
    /// Output bit depth (8 or 16).
    #[arg(long, default_value = "8")]
    pub bits: PngBitDepth,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Shape: cube, prism, bezier_star, or mixed.
    #[arg(long, default_value = "cube")]
    pub shape: SyntheticShape,
    /// Output scene directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_VIEWS)]
    pub views: usize,
    #[arg(long, default_value_t = DEFAULT_IMAGE_SIZE)]
    pub width: u32,
    #[arg(long, default_value_t = DEFAULT_IMAGE_SIZE)]
    pub height: u32,
    /// Ground-truth splat scale in meters (sx,sy,sz).
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub gt_scale: Option<Vec<f64>>,
    #[arg(long)]
    pub gt_opacity: Option<f64>,
    /// View image bit depth (8 or 16).
    #[arg(long, default_value = "16")]
    pub bits: PngBitDepth,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Noise standard deviation in scene units (meters).
    #[arg(long)]
    pub sigma: f64,
}

#[derive(Debug, Args)]
pub struct FragmentArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of sub-sketches per input sketch.
    #[arg(long)]
    pub parts: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Scene directory (cameras.json, edges_gt.json, views/).
    #[arg(long)]
    pub scene: PathBuf,
    /// Initial sketches; defaults to the scene's ground-truth file.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Output sketch file (input units).
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch CSV log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub sample_step: Option<f64>,
    #[arg(long)]
    pub loss_samples: Option<usize>,
    /// First epoch the topology passes run at (0 disables them).
    #[arg(long)]
    pub topology_start: Option<usize>,
    #[arg(long)]
    pub topology_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Sketch file to render.
    #[arg(long)]
    pub sketches: PathBuf,
    /// Camera list JSON.
    #[arg(long)]
    pub cameras: PathBuf,
    /// Index into the camera list.
    #[arg(long, default_value_t = 0)]
    pub view: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Arc-length sampling step (meters).
    #[arg(long, default_value_t = DEFAULT_SAMPLE_STEP)]
    pub step: f64,
    /// Use the unoptimized skip-free compositor.
    #[arg(long)]
    pub reference: bool,
    #[arg(long, default_value = "8")]
    pub bits: PngBitDepth,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted sketch file.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth sketch file.
    #[arg(long)]
    pub gt: PathBuf,
    /// Output metrics JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Resampling step for both sets (meters).
    #[arg(long, default_value_t = DEFAULT_SAMPLE_STEP)]
    pub step: f64,
}

// ---------------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------------

/// Optional JSON config; every field falls back to the built-in default and
/// is overridden by the matching command-line flag.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub epochs: Option<usize>,
    pub sample_step: Option<f64>,
    pub loss_samples: Option<usize>,
    pub lr_points: Option<f64>,
    pub lr_opacity: Option<f64>,
    pub lr_log_scale: Option<f64>,
    pub topology_start: Option<usize>,
    pub topology_every: Option<usize>,
    pub th_connect: Option<f64>,
    pub th_neighbor: Option<f64>,
    pub th_overlap: Option<f64>,
    pub th_visibility: Option<f64>,
    pub seed: Option<u64>,
    pub alpha_threshold: Option<f64>,
    pub depth_threshold: Option<f64>,
    pub normal_threshold: Option<f64>,
    pub blur_sigma: Option<f64>,
    pub blur_radius: Option<usize>,
}

pub fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    match path {
        Some(p) => Ok(serde_json::from_str(&fs::read_to_string(p)?)?),
        None => Ok(ConfigFile::default()),
    }
}

fn pick<T: Copy>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Defaults < config file < flags; the global seed wins over the file's.
pub fn resolve_train_config(
    file: &ConfigFile,
    args: &TrainArgs,
    seed: Option<u64>,
) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.epochs = pick(args.epochs, file.epochs, cfg.epochs);
    cfg.sample_step = pick(args.sample_step, file.sample_step, cfg.sample_step);
    cfg.loss_samples = pick(args.loss_samples, file.loss_samples, cfg.loss_samples);
    cfg.lr.points = file.lr_points.unwrap_or(cfg.lr.points);
    cfg.lr.opacity = file.lr_opacity.unwrap_or(cfg.lr.opacity);
    cfg.lr.log_scale = file.lr_log_scale.unwrap_or(cfg.lr.log_scale);
    cfg.topology_start = pick(args.topology_start, file.topology_start, cfg.topology_start);
    cfg.topology_every = pick(args.topology_every, file.topology_every, cfg.topology_every);
    cfg.topology.th_connect = file.th_connect.unwrap_or(cfg.topology.th_connect);
    cfg.topology.th_neighbor = file.th_neighbor.unwrap_or(cfg.topology.th_neighbor);
    cfg.topology.th_overlap = file.th_overlap.unwrap_or(cfg.topology.th_overlap);
    cfg.topology.th_visibility = file.th_visibility.unwrap_or(cfg.topology.th_visibility);
    cfg.topology.sample_step = cfg.sample_step;
    cfg.seed = seed.or(file.seed).unwrap_or(cfg.seed);
    cfg
}

fn resolve_thresholds(file: &ConfigFile, args: &DetectArgs) -> (DetectorThresholds, f64, usize) {
    let base = DetectorThresholds::default();
    let th = DetectorThresholds {
        alpha: pick(args.alpha_threshold, file.alpha_threshold, base.alpha),
        depth: pick(args.depth_threshold, file.depth_threshold, base.depth),
        normal: pick(args.normal_threshold, file.normal_threshold, base.normal),
    };
    let sigma = pick(args.blur_sigma, file.blur_sigma, crate::detector::BLUR_SIGMA);
    let radius = pick(args.blur_radius, file.blur_radius, crate::detector::BLUR_RADIUS);
    (th, sigma, radius)
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_detect(args: &DetectArgs) -> Result<()> {
    let file = load_config(args.config.as_deref())?;
    let (th, sigma, radius) = resolve_thresholds(&file, args);
    let mut maps = GeometryMaps::default();
    if let Some(p) = &args.alpha {
        let img = load_alpha_png(p)?;
        maps.alpha = Some(ScalarField::from_data(
            img.width(),
            img.height(),
            img.as_slice().to_vec(),
        )?);
    }
    if let Some(p) = &args.depth {
        maps.depth = Some(load_depth(p)?);
    }
    if let Some(p) = &args.normal {
        maps.normal = Some(load_normals_png(p)?);
    }
    let result = detect_edges_with_blur(&maps, &th, sigma, radius)?;
    save_edge_png(&args.out, &result.edges, args.bits)?;
    if let Some(p) = &args.mask_out {
        save_edge_png(p, &result.mask, args.bits)?;
    }
    println!("detect: wrote {}", args.out.display());
    Ok(())
}

/// Runs detection and re-applies the blur when non-default parameters are
/// requested (the core detector uses its published constants).
fn detect_edges_with_blur(
    maps: &GeometryMaps,
    th: &DetectorThresholds,
    sigma: f64,
    radius: usize,
) -> Result<crate::detector::DetectionResult> {
    let mut result = detect_edges(maps, th)?;
    if sigma != crate::detector::BLUR_SIGMA || radius != crate::detector::BLUR_RADIUS {
        result.edges = crate::detector::gaussian_blur(&result.mask, sigma, radius);
    }
    Ok(result)
}

fn cmd_synth(args: &SynthArgs, seed: u64) -> Result<()> {
    let mut spec = SyntheticSpec {
        shape: args.shape,
        n_views: args.views,
        width: args.width,
        height: args.height,
        seed,
        ..Default::default()
    };
    if let Some(s) = &args.gt_scale {
        spec.gt_scale = Vector3::new(s[0], s[1], s[2]);
    }
    if let Some(o) = args.gt_opacity {
        spec.gt_opacity = o;
    }
    let scene = generate_synthetic(&spec)?;
    save_scene_dir(&args.out, &scene, args.bits)?;
    println!(
        "synth: {} scene with {} sketches, {} views -> {}",
        args.shape,
        scene.set.live_sketch_count(),
        scene.cameras.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_perturb(args: &PerturbArgs, seed: u64) -> Result<()> {
    let set = load_sketches(&args.input)?;
    let noisy = perturb_init(&set, args.sigma, seed)?;
    save_sketches(&args.out, &noisy)?;
    println!(
        "perturb: sigma {} over {} points -> {}",
        args.sigma,
        set.pool.live_count(),
        args.out.display()
    );
    Ok(())
}

fn cmd_fragment(args: &FragmentArgs, seed: u64) -> Result<()> {
    let set = load_sketches(&args.input)?;
    let split = fragment_init(&set, args.parts, seed)?;
    save_sketches(&args.out, &split)?;
    println!(
        "fragment: {} sketches x {} parts -> {} sketches, {}",
        set.live_sketch_count(),
        args.parts,
        split.live_sketch_count(),
        args.out.display()
    );
    Ok(())
}

fn write_train_log(path: &Path, report: &crate::optim::TrainReport) -> Result<()> {
    let mut csv = String::from(
        "epoch,loss,live_sketches,live_points,wall_ms,endpoint_merges,overlap_removed,colinear_merges\n",
    );
    for r in &report.epochs {
        let topo = r.topology.unwrap_or_default();
        csv.push_str(&format!(
            "{},{:.8e},{},{},{:.1},{},{},{}\n",
            r.epoch,
            r.loss,
            r.live_sketches,
            r.live_points,
            r.wall_ms,
            topo.endpoint_merges,
            topo.overlap_removed,
            topo.colinear_merges,
        ));
    }
    fs::write(path, csv)?;
    Ok(())
}

fn cmd_train(args: &TrainArgs, seed: Option<u64>) -> Result<()> {
    let file = load_config(args.config.as_deref())?;
    let cfg = resolve_train_config(&file, args, seed);

    let mut scene = load_scene_dir(&args.scene)?;
    if let Some(init) = &args.init {
        scene.set = load_sketches(init)?;
    }
    let applied = normalize_scene(&mut scene)?;
    log::debug!(
        "normalization scale {} offset {:?}",
        applied.scale,
        applied.offset
    );

    let report = train(&mut scene.set, &scene.cameras, &scene.targets, &cfg)?;

    // Export in the units of the input files.
    transform_set(&mut scene.set, &applied.inverse());
    save_sketches(&args.out, &scene.set)?;
    if let Some(log_path) = &args.log {
        write_train_log(log_path, &report)?;
    }

    let stride = (cfg.epochs / 10).max(1);
    for r in &report.epochs {
        if r.epoch % stride == 0 || r.epoch == cfg.epochs {
            println!(
                "epoch {:>5}/{} loss {:.6} sketches {} points {}",
                r.epoch, cfg.epochs, r.loss, r.live_sketches, r.live_points
            );
        }
    }
    println!(
        "train: {} sketches, {} points ({} filtered as invisible) -> {}",
        scene.set.live_sketch_count(),
        scene.set.pool.live_count(),
        report.filtered_invisible,
        args.out.display()
    );
    Ok(())
}

fn cmd_render(args: &RenderArgs) -> Result<()> {
    let set = load_sketches(&args.sketches)?;
    let cameras = io::load_cameras(&args.cameras)?;
    let cam = cameras.get(args.view).ok_or_else(|| {
        Error::contract(format!(
            "view {} out of range: camera file has {} entries",
            args.view,
            cameras.len()
        ))
    })?;
    let plans = crate::optim::epoch_plans(&set, args.step)?;
    let splats = crate::optim::build_splats(&set, &plans)?;
    let img = if args.reference {
        reference_render(&splats, cam)?
    } else {
        render(&splats, cam)?
    };
    save_edge_png(&args.out, &img, args.bits)?;
    println!(
        "render: {} splats through view {} -> {}",
        splats.len(),
        args.view,
        args.out.display()
    );
    Ok(())
}

fn metrics_json(report: &crate::metrics::MetricsReport, e_num: usize) -> Result<String> {
    let mm = |v: f64| fmt_float(v * 1000.0);
    let mut out = String::from("{\n");
    out.push_str(&format!("  \"A_mm\": {},\n", mm(report.accuracy)?));
    out.push_str(&format!("  \"C_mm\": {},\n", mm(report.completeness)?));
    for (i, label) in ["5", "10", "20"].iter().enumerate() {
        out.push_str(&format!("  \"R{label}\": {},\n", fmt_float(report.recall[i])?));
        out.push_str(&format!("  \"P{label}\": {},\n", fmt_float(report.precision[i])?));
        out.push_str(&format!("  \"F{label}\": {},\n", fmt_float(report.f_score[i])?));
    }
    out.push_str(&format!("  \"e_num\": {e_num}\n}}\n"));
    Ok(out)
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let pred = load_sketches(&args.pred)?;
    let gt = load_sketches(&args.gt)?;
    let report = evaluate_sets(&pred, &gt, args.step)?;
    let e_num = pred.live_sketch_count();

    println!("accuracy      {:8.3} mm", report.accuracy * 1000.0);
    println!("completeness  {:8.3} mm", report.completeness * 1000.0);
    println!("tau      recall   precision  f-score");
    for (i, tau) in report.thresholds.iter().enumerate() {
        println!(
            "{:>3.0} mm   {:.4}   {:.4}     {:.4}",
            tau * 1000.0,
            report.recall[i],
            report.precision[i],
            report.f_score[i]
        );
    }
    println!("edges    {e_num}");

    if let Some(out) = &args.out {
        fs::write(out, metrics_json(&report, e_num)?)?;
        println!("eval: wrote {}", out.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

pub fn run() -> Result<()> {
    let cli = Cli::parse();
    dispatch(cli)
}

pub fn dispatch(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::contract("--threads must be at least 1"));
        }
        if t != 1 {
            eprintln!("note: execution is single-threaded; ignoring --threads {t}");
        }
    }
    let seed = cli.seed;
    match &cli.command {
        Command::Detect(a) => cmd_detect(a),
        Command::Synth(a) => cmd_synth(a, seed.unwrap_or(0)),
        Command::Perturb(a) => cmd_perturb(a, seed.unwrap_or(0)),
        Command::Fragment(a) => cmd_fragment(a, seed.unwrap_or(0)),
        Command::Train(a) => cmd_train(a, seed),
        Command::Render(a) => cmd_render(a),
        Command::Eval(a) => cmd_eval(a),
    }
}
