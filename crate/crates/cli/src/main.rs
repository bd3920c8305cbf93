use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use focusfuse_core::{
    apply_affine, apply_scale_map, build_focus_volume, compute_metrics, dense_scale_map, dff_depth,
    fit_global_ls, fit_global_ls_weighted, fit_global_ransac, make_focus_schedule,
    refine_scale_map, synthesize_focal_stack, DepthMap, DepthUnit, Mask, Spacing, UncertaintyMap,
};
use focusfuse_cli::ablate::{self, Axis};
use focusfuse_cli::bench::{self, BenchSettings, FitSpec};
use focusfuse_cli::config::{EvalConfig, FitMethod, PipelineConfig, Settings};
use focusfuse_cli::error::{exit, CliError, Result};
use focusfuse_cli::{io, pipeline};

#[derive(Parser, Debug)]
#[command(name = "focusfuse", version, about = "Metric depth from focal stacks and relative depth")]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every stochastic step (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a focal stack from a sharp image and ground-truth depth.
    Synth(SynthArgs),
    /// Depth from focus over a focal stack directory.
    Dff(DffArgs),
    /// Fit relative depth to DFF depth and build the dense scale map.
    Fuse(FuseArgs),
    /// Refine a scale map and apply it to the globally scaled depth.
    Refine(RefineArgs),
    /// Score a depth prediction against ground truth.
    Eval(EvalArgs),
    /// Run the full pipeline over a dataset described by --config.
    Pipeline,
    /// Compare pipeline variants along one axis.
    Ablate(AblateArgs),
    /// Time least squares against RANSAC global scaling.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Sharp intensity image (.png or .pfm).
    #[arg(long)]
    image: PathBuf,
    /// Ground-truth depth (.pfm or 16-bit .png).
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    d_min: Option<f64>,
    #[arg(long)]
    d_max: Option<f64>,
    /// uniform_depth or uniform_diopter.
    #[arg(long)]
    spacing: Option<String>,
    /// Millimeters per unit for 16-bit PNG depth.
    #[arg(long, default_value_t = 1.0)]
    png_scale_mm: f64,
    /// Write full-precision PFM frames instead of 8-bit PNG.
    #[arg(long)]
    pfm: bool,
}

#[derive(Args, Debug)]
struct DffArgs {
    /// Directory with frames and distances.json.
    #[arg(long)]
    stack: PathBuf,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    interpolate: bool,
}

#[derive(Args, Debug)]
struct FuseArgs {
    /// Relative depth (.pfm).
    #[arg(long)]
    relative: PathBuf,
    /// DFF depth (.pfm).
    #[arg(long)]
    dff: PathBuf,
    /// ls or ransac.
    #[arg(long)]
    method: Option<String>,
    /// DFF uncertainty (.pfm), used with --weighted.
    #[arg(long)]
    uncertainty: Option<PathBuf>,
    /// Weight the least-squares fit by DFF confidence.
    #[arg(long)]
    weighted: bool,
}

#[derive(Args, Debug)]
struct RefineArgs {
    /// Globally scaled depth (.pfm).
    #[arg(long)]
    global: PathBuf,
    /// Raw dense scale map (.pfm).
    #[arg(long)]
    scale: PathBuf,
    /// DFF uncertainty (.pfm); all-confident when omitted.
    #[arg(long)]
    uncertainty: Option<PathBuf>,
    /// Ignore the uncertainty map.
    #[arg(long)]
    no_uncertainty: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    min_depth: Option<f64>,
    #[arg(long)]
    max_depth: Option<f64>,
    /// Use the 2 m evaluation cap.
    #[arg(long)]
    near: bool,
    #[arg(long, default_value_t = 1.0)]
    png_scale_mm: f64,
}

#[derive(Args, Debug)]
struct AblateArgs {
    /// stack_size, uncertainty, fit_method or refinement.
    #[arg(long)]
    axis: String,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Image sizes as HEIGHTxWIDTH.
    #[arg(long, value_delimiter = ',', default_value = "383x552")]
    sizes: Vec<String>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Fraction of gross outliers in the synthetic data.
    #[arg(long, default_value_t = 0.0)]
    outliers: f64,
}

fn settings(cli: &Cli) -> Result<Settings> {
    match &cli.config {
        Some(p) => Settings::load(p),
        None => Ok(Settings::default()),
    }
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn parse_spacing(s: &str) -> Result<Spacing> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| CliError::Config(format!("unknown spacing {s:?}")))
}

fn parse_method(s: &str) -> Result<FitMethod> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| CliError::Config(format!("unknown fit method {s:?} (ls, ransac)")))
}

fn run_synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let s = settings(cli)?;
    let image = io::read_intensity(&args.image)?;
    let depth = io::read_depth(&args.depth, args.png_scale_mm)?;
    let spacing = match &args.spacing {
        Some(sp) => parse_spacing(sp)?,
        None => s.schedule.spacing,
    };
    let schedule = make_focus_schedule(
        args.d_min.unwrap_or(s.schedule.d_min),
        args.d_max.unwrap_or(s.schedule.d_max),
        args.count.unwrap_or(s.schedule.count),
        spacing,
    )
    .map_err(|e| CliError::Config(format!("schedule: {e}")))?;
    s.camera.validate().map_err(|e| CliError::Config(format!("camera: {e}")))?;
    let stack = synthesize_focal_stack(&image, &depth, &s.camera, &schedule)?;
    let out = out_dir(cli)?;
    io::write_stack(&stack, &out, args.pfm)?;
    println!("wrote {} frames to {}", stack.len(), out.display());
    Ok(())
}

fn run_dff(cli: &Cli, args: &DffArgs) -> Result<()> {
    let s = settings(cli)?;
    let stack = io::read_stack(&args.stack)?;
    let window = args.window.unwrap_or(s.dff.window);
    let volume = build_focus_volume(&stack, window).map_err(|e| CliError::Config(e.to_string()))?;
    let (depth, unc) = dff_depth(&volume, args.interpolate || s.dff.interpolate)?;
    let out = out_dir(cli)?;
    io::write_pfm(&depth, &out.join("dff.pfm"))?;
    io::write_uncertainty_pfm(&unc, &out.join("uncertainty.pfm"))?;
    Ok(())
}

fn run_fuse(cli: &Cli, args: &FuseArgs) -> Result<()> {
    let s = settings(cli)?;
    let relative = io::read_pfm(&args.relative, DepthUnit::Dimensionless)?;
    let dff = io::read_pfm(&args.dff, DepthUnit::Meters)?;
    let mask = Mask::filled(relative.width(), relative.height(), true);
    let method = match &args.method {
        Some(m) => parse_method(m)?,
        None => s.fit.method,
    };
    let affine = match method {
        FitMethod::Ransac => {
            let mut cfg = s.fit.ransac;
            cfg.seed = cli.seed.or(s.seed).unwrap_or(cfg.seed);
            fit_global_ransac(&relative, &dff, &mask, &cfg)?
        }
        FitMethod::Ls if args.weighted || s.fit.confidence_weighted => {
            let path = args.uncertainty.as_ref().ok_or_else(|| {
                CliError::Config("--weighted needs --uncertainty".into())
            })?;
            let unc = io::read_uncertainty_pfm(path)?;
            let w: Vec<f64> = unc.values().iter().map(|u| 1.0 - u).collect();
            fit_global_ls_weighted(&relative, &dff, &mask, &w)?
        }
        FitMethod::Ls => fit_global_ls(&relative, &dff, &mask)?,
    };
    let global = apply_affine(&relative, &affine);
    let scale = dense_scale_map(&global, &dff, &mask)?;
    let out = out_dir(cli)?;
    io::write_pfm(&global, &out.join("global.pfm"))?;
    io::write_scale_pfm(&scale, &out.join("scale_raw.pfm"))?;
    io::write_json(&affine, &out.join("affine.json"))?;
    println!("scale {} shift {}", affine.scale, affine.shift);
    Ok(())
}

fn run_refine(cli: &Cli, args: &RefineArgs) -> Result<()> {
    let s = settings(cli)?;
    let global = io::read_pfm(&args.global, DepthUnit::Meters)?;
    let raw = io::read_scale_pfm(&args.scale)?;
    let unc = match &args.uncertainty {
        Some(p) => io::read_uncertainty_pfm(p)?,
        None => UncertaintyMap::filled(global.width(), global.height(), 0.0)?,
    };
    let mut params = s.refine.params;
    if args.no_uncertainty {
        params.use_uncertainty = false;
    }
    let refined = refine_scale_map(&raw, &unc, &global, &params)?;
    let depth = apply_scale_map(&global, &refined)?;
    let out = out_dir(cli)?;
    io::write_scale_pfm(&refined, &out.join("scale_refined.pfm"))?;
    io::write_pfm(&depth, &out.join("final.pfm"))?;
    Ok(())
}

fn run_eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let s = settings(cli)?;
    let pred = io::read_depth(&args.pred, args.png_scale_mm)?;
    let gt = io::read_depth(&args.gt, args.png_scale_mm)?;
    let caps = if args.near { EvalConfig::TWO_METERS } else { s.eval };
    let mask = gt
        .valid_mask(args.min_depth.unwrap_or(caps.min_depth), args.max_depth.unwrap_or(caps.max_depth))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let report = compute_metrics(&pred, &gt, &mask)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    if let Some(dir) = &cli.out {
        let dir = out_dir(cli).map(|_| dir.clone())?;
        io::write_json(&report, &dir.join("metrics.json"))?;
        let err: Vec<f64> = (0..gt.len()).map(|i| (pred.value(i) - gt.value(i)).abs()).collect();
        let valid = (0..gt.len()).map(|i| mask.get(i) && pred.is_valid(i)).collect();
        let map = DepthMap::with_validity(gt.width(), gt.height(), err, valid, DepthUnit::Dimensionless)?;
        io::write_pfm(&map, &dir.join("abs_error.pfm"))?;
    }
    Ok(())
}

fn pipeline_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = absolute(out);
    }
    Ok(cfg)
}

fn absolute(p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf())
    }
}

fn run_pipeline(cli: &Cli) -> Result<()> {
    let cfg = pipeline_config(cli)?;
    let outcome = pipeline::run_pipeline(&cfg)?;
    let agg = &outcome.report.aggregate;
    println!(
        "{} images ({} failed); rmse dff {:.4} global {:.4} final {:.4}",
        agg.images,
        agg.failed,
        agg.dff.rmse,
        agg.global.rmse,
        agg.final_stage().rmse
    );
    println!("report: {}", cfg.output_dir.join(pipeline::REPORT_NAME).display());
    Ok(())
}

fn run_ablate(cli: &Cli, args: &AblateArgs) -> Result<()> {
    let axis: Axis = args.axis.parse()?;
    let cfg = pipeline_config(cli)?;
    let report = ablate::ablate(&cfg, axis)?;
    print!("{report}");
    Ok(())
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let parse = |v: &str| v.trim().parse::<usize>().ok();
    match s.split_once(['x', 'X']) {
        Some((h, w)) => match (parse(h), parse(w)) {
            (Some(h), Some(w)) if h > 0 && w > 0 => Ok((h, w)),
            _ => Err(CliError::Config(format!("bad size {s:?}"))),
        },
        None => Err(CliError::Config(format!("bad size {s:?}, expected HEIGHTxWIDTH"))),
    }
}

fn run_bench(cli: &Cli, args: &BenchArgs) -> Result<()> {
    let sizes = args.sizes.iter().map(|s| parse_size(s)).collect::<Result<Vec<_>>>()?;
    let settings = BenchSettings {
        repeats: args.repeats,
        seed: cli.seed.unwrap_or(42),
        outlier_fraction: args.outliers,
        ..BenchSettings::default()
    };
    let table = bench::bench_global_scaling(&sizes, &FitSpec::ablation_set(), &settings)?;
    print!("{table}");
    if cli.out.is_some() {
        let dir = out_dir(cli)?;
        io::write_json(&table, &dir.join("bench.json"))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    match &cli.command {
        Command::Synth(a) => run_synth(cli, a),
        Command::Dff(a) => run_dff(cli, a),
        Command::Fuse(a) => run_fuse(cli, a),
        Command::Refine(a) => run_refine(cli, a),
        Command::Eval(a) => run_eval(cli, a),
        Command::Pipeline => run_pipeline(cli),
        Command::Ablate(a) => run_ablate(cli, a),
        Command::Bench(a) => run_bench(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::CONFIG as u8 } else { exit::OK as u8 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
