//! End-to-end run: focal stack → DFF → global fit → scale map → refinement
//! → evaluation, for every image of a dataset.
//!
//! Images are processed in parallel but each one is computed independently
//! from read-only inputs and the report lists them in sorted-stem order, so
//! the report does not depend on the thread count. Wall-clock timings are
//! kept out of the report and written to `timings.json` instead.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use focusfuse_core::{
    apply_affine, apply_scale_map, build_focus_volume, compute_metrics, dense_scale_map, dff_depth,
    fit_global_ls, fit_global_ls_weighted, fit_global_ransac, refine_scale_map,
    synthesize_focal_stack, AffineScale, DepthMap, DepthUnit, FocalStack, FocusVolume, Image, Mask,
    MetricsReport, ScaleMap, UncertaintyMap,
};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{FitMethod, PipelineConfig, SCHEMA_VERSION};
use crate::error::{CliError, Result};
use crate::io;

pub const REPORT_NAME: &str = "report.json";
pub const TIMINGS_NAME: &str = "timings.json";

/// Where an image's focal stack comes from.
#[derive(Debug, Clone)]
pub enum StackSource {
    /// Render from a sharp image and the ground-truth depth.
    Synthesize(Image),
    Real(FocalStack),
}

/// Every intermediate map produced for one image.
#[derive(Debug, Clone)]
pub struct Fused {
    pub stack_len: usize,
    pub dff: DepthMap,
    pub uncertainty: UncertaintyMap,
    pub affine: AffineScale,
    pub global: DepthMap,
    pub raw_scale: ScaleMap,
    /// `None` when refinement is disabled.
    pub refined_scale: Option<ScaleMap>,
    /// `global / refined_scale`, or the global map without refinement.
    pub final_depth: DepthMap,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub stack_ms: f64,
    pub dff_ms: f64,
    pub fit_ms: f64,
    pub scale_map_ms: f64,
    pub refine_ms: f64,
    pub eval_ms: f64,
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Replaces the focus responses of `fraction` of the pixels with a nearly
/// flat random profile `1 + 0.25 · U(0, 1)` per slice: the pixel keeps no
/// usable focus evidence and its peak lands on a random slice.
pub fn corrupt_volume(volume: &FocusVolume, fraction: f64, rng: &mut ChaCha8Rng) -> Result<FocusVolume> {
    let (w, h) = volume.dims();
    let n = w * h;
    let count = ((fraction * n as f64).round() as usize).min(n);
    let mut slices: Vec<Vec<f64>> = volume.slices().iter().map(|s| s.data().to_vec()).collect();
    let mut picked = sample(rng, n, count).into_vec();
    picked.sort_unstable();
    for i in picked {
        for slice in slices.iter_mut() {
            slice[i] = 1.0 + 0.25 * rng.gen::<f64>();
        }
    }
    let slices = slices
        .into_iter()
        .map(|d| Image::new(w, h, d))
        .collect::<focusfuse_core::Result<Vec<_>>>()?;
    Ok(FocusVolume::new(slices, volume.distances().to_vec())?)
}

/// Runs the fusion stages for one image. `index` keys the image's random
/// streams so results do not depend on processing order.
pub fn fuse_image(
    cfg: &PipelineConfig,
    source: &StackSource,
    gt: &DepthMap,
    relative: &DepthMap,
    index: usize,
) -> Result<(Fused, StageTimings)> {
    let mut t = StageTimings::default();
    if gt.dims() != relative.dims() {
        return Err(CliError::Data(format!(
            "ground truth is {}x{} but relative depth is {}x{}",
            gt.width(),
            gt.height(),
            relative.width(),
            relative.height()
        )));
    }

    let start = Instant::now();
    let stack = match source {
        StackSource::Synthesize(image) => {
            synthesize_focal_stack(image, gt, &cfg.camera, &cfg.schedule.build()?)?
        }
        StackSource::Real(stack) => stack.clone(),
    };
    if stack.dims() != gt.dims() {
        return Err(CliError::Data("focal stack and depth sizes differ".into()));
    }
    t.stack_ms = ms(start);

    let start = Instant::now();
    let mut volume = build_focus_volume(&stack, cfg.dff.window)?;
    if cfg.corruption.fraction > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(index as u64 + 1);
        volume = corrupt_volume(&volume, cfg.corruption.fraction, &mut rng)?;
    }
    let (dff, uncertainty) = dff_depth(&volume, cfg.dff.interpolate)?;
    t.dff_ms = ms(start);

    let start = Instant::now();
    let (w, h) = gt.dims();
    let all = Mask::filled(w, h, true);
    let affine = match (cfg.fit.method, cfg.fit.confidence_weighted) {
        (FitMethod::Ls, false) => fit_global_ls(relative, &dff, &all)?,
        (FitMethod::Ls, true) => {
            let weights: Vec<f64> = uncertainty.values().iter().map(|u| 1.0 - u).collect();
            fit_global_ls_weighted(relative, &dff, &all, &weights)?
        }
        (FitMethod::Ransac, _) => fit_global_ransac(relative, &dff, &all, &cfg.ransac())?,
    };
    let global = apply_affine(relative, &affine);
    t.fit_ms = ms(start);

    let start = Instant::now();
    let raw_scale = dense_scale_map(&global, &dff, &all)?;
    t.scale_map_ms = ms(start);

    let start = Instant::now();
    let (refined_scale, final_depth) = if cfg.refine.enabled {
        let refined = refine_scale_map(&raw_scale, &uncertainty, &global, &cfg.refine.params)?;
        let depth = apply_scale_map(&global, &refined)?;
        (Some(refined), depth)
    } else {
        (None, global.clone())
    };
    t.refine_ms = ms(start);

    Ok((
        Fused {
            stack_len: stack.len(),
            dff,
            uncertainty,
            affine,
            global,
            raw_scale,
            refined_scale,
            final_depth,
        },
        t,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub dff: MetricsReport,
    pub global: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refined: Option<MetricsReport>,
}

impl StageMetrics {
    /// Metrics of the pipeline output: refined when available.
    pub fn final_stage(&self) -> &MetricsReport {
        self.refined.as_ref().unwrap_or(&self.global)
    }
}

/// Scores every stage on one shared mask: ground truth within the caps and
/// valid in every stage's output.
pub fn evaluate(cfg: &PipelineConfig, gt: &DepthMap, fused: &Fused) -> Result<StageMetrics> {
    let mut mask = gt.valid_mask(cfg.eval.min_depth, cfg.eval.max_depth)?;
    for m in [&fused.dff, &fused.global, &fused.final_depth] {
        mask = mask.and(m.validity())?;
    }
    Ok(StageMetrics {
        dff: compute_metrics(&fused.dff, gt, &mask)?,
        global: compute_metrics(&fused.global, gt, &mask)?,
        refined: match fused.refined_scale {
            Some(_) => Some(compute_metrics(&fused.final_depth, gt, &mask)?),
            None => None,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stack_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub affine: Option<AffineScale>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<StageMetrics>,
}

/// Arithmetic mean of per-image metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub mse: f64,
    pub rmse: f64,
    pub absrel: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub pixel_count: f64,
}

impl MeanMetrics {
    pub fn of<'a>(reports: impl IntoIterator<Item = &'a MetricsReport>) -> Option<MeanMetrics> {
        let mut acc = MeanMetrics::default();
        let mut n = 0usize;
        for r in reports {
            acc.mse += r.mse;
            acc.rmse += r.rmse;
            acc.absrel += r.absrel;
            acc.delta1 += r.delta1;
            acc.delta2 += r.delta2;
            acc.delta3 += r.delta3;
            acc.pixel_count += r.pixel_count as f64;
            n += 1;
        }
        if n == 0 {
            return None;
        }
        let k = n as f64;
        Some(MeanMetrics {
            mse: acc.mse / k,
            rmse: acc.rmse / k,
            absrel: acc.absrel / k,
            delta1: acc.delta1 / k,
            delta2: acc.delta2 / k,
            delta3: acc.delta3 / k,
            pixel_count: acc.pixel_count / k,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub images: usize,
    pub failed: usize,
    pub dff: MeanMetrics,
    pub global: MeanMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refined: Option<MeanMetrics>,
}

impl Aggregate {
    pub fn final_stage(&self) -> &MeanMetrics {
        self.refined.as_ref().unwrap_or(&self.global)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: PipelineConfig,
    pub images: Vec<ImageReport>,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTimings {
    pub name: String,
    pub stages: StageTimings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub images: Vec<ImageTimings>,
    pub total_ms: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub timings: TimingReport,
}

/// One dataset entry.
#[derive(Debug, Clone)]
pub struct ImageEntry {
    pub name: String,
    pub gt: PathBuf,
}

/// Image stems, taken from the ground-truth directory in sorted order.
pub fn discover(cfg: &PipelineConfig) -> Result<Vec<ImageEntry>> {
    let files = io::list_files(&cfg.inputs.gt_dir, &["pfm", "png"])?;
    let mut entries: Vec<ImageEntry> = Vec::new();
    for gt in files {
        let name = gt
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        if entries.last().is_some_and(|e| e.name == name) {
            return Err(CliError::Data(format!(
                "two ground-truth files share the stem {name:?}"
            )));
        }
        entries.push(ImageEntry { name, gt });
    }
    if entries.is_empty() {
        return Err(CliError::Data(format!(
            "no ground-truth depth files in {}",
            cfg.inputs.gt_dir.display()
        )));
    }
    Ok(entries)
}

fn find_with_ext(dir: &Path, stem: &str, exts: &[&str]) -> Result<PathBuf> {
    exts.iter()
        .map(|e| dir.join(format!("{stem}.{e}")))
        .find(|p| p.is_file())
        .ok_or_else(|| CliError::Data(format!("no {stem}.{{{}}} in {}", exts.join(","), dir.display())))
}

fn load_source(cfg: &PipelineConfig, name: &str) -> Result<StackSource> {
    match (&cfg.inputs.stack_dir, &cfg.inputs.rgb_dir) {
        (Some(stacks), _) => Ok(StackSource::Real(io::read_stack(&stacks.join(name))?)),
        (None, Some(rgb)) => Ok(StackSource::Synthesize(io::read_intensity(&find_with_ext(
            rgb,
            name,
            &["png", "pfm"],
        )?)?)),
        (None, None) => Err(CliError::Config("no stack source configured".into())),
    }
}

struct ImageRun {
    report: ImageReport,
    timings: StageTimings,
    maps: Option<Fused>,
}

fn run_image(cfg: &PipelineConfig, entry: &ImageEntry, index: usize) -> ImageRun {
    let attempt = || -> Result<(Fused, StageTimings, StageMetrics)> {
        let gt = io::read_depth(&entry.gt, cfg.inputs.gt_png_scale_mm)?;
        let relative = io::read_pfm(
            &find_with_ext(&cfg.inputs.relative_dir, &entry.name, &["pfm"])?,
            DepthUnit::Dimensionless,
        )?;
        let source = load_source(cfg, &entry.name)?;
        let (fused, mut timings) = fuse_image(cfg, &source, &gt, &relative, index)?;
        let start = Instant::now();
        let metrics = evaluate(cfg, &gt, &fused)?;
        timings.eval_ms = ms(start);
        Ok((fused, timings, metrics))
    };
    match attempt() {
        Ok((fused, timings, metrics)) => ImageRun {
            report: ImageReport {
                name: entry.name.clone(),
                error: None,
                stack_size: Some(fused.stack_len),
                affine: Some(fused.affine),
                metrics: Some(metrics),
            },
            timings,
            maps: cfg.write_maps.then_some(fused),
        },
        Err(e) => ImageRun {
            report: ImageReport {
                name: entry.name.clone(),
                error: Some(e.to_string()),
                stack_size: None,
                affine: None,
                metrics: None,
            },
            timings: StageTimings::default(),
            maps: None,
        },
    }
}

fn write_maps(dir: &Path, fused: &Fused, gt: Option<&DepthMap>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    io::write_pfm(&fused.dff, &dir.join("dff.pfm"))?;
    io::write_uncertainty_pfm(&fused.uncertainty, &dir.join("uncertainty.pfm"))?;
    io::write_pfm(&fused.global, &dir.join("global.pfm"))?;
    io::write_scale_pfm(&fused.raw_scale, &dir.join("scale_raw.pfm"))?;
    if let Some(s) = &fused.refined_scale {
        io::write_scale_pfm(s, &dir.join("scale_refined.pfm"))?;
    }
    io::write_pfm(&fused.final_depth, &dir.join("final.pfm"))?;
    if let Some(gt) = gt {
        let err: Vec<f64> = (0..gt.len())
            .map(|i| (fused.final_depth.value(i) - gt.value(i)).abs())
            .collect();
        let valid = (0..gt.len())
            .map(|i| gt.is_valid(i) && fused.final_depth.is_valid(i))
            .collect();
        let map = DepthMap::with_validity(gt.width(), gt.height(), err, valid, DepthUnit::Dimensionless)?;
        io::write_pfm(&map, &dir.join("abs_error.pfm"))?;
    }
    Ok(())
}

/// Runs the whole dataset without touching the output directory.
pub fn run_in_memory(cfg: &PipelineConfig) -> Result<(RunOutcome, Vec<Option<Fused>>)> {
    cfg.validate()?;
    let entries = discover(cfg)?;
    let start = Instant::now();
    let runs: Vec<ImageRun> = entries
        .par_iter()
        .enumerate()
        .map(|(i, e)| run_image(cfg, e, i))
        .collect();
    let total_ms = ms(start);
    let failed = runs.iter().filter(|r| r.report.error.is_some()).count();
    if failed == runs.len() {
        let first = runs[0].report.error.clone().unwrap_or_default();
        eprintln!("first failure: {}: {first}", runs[0].report.name);
        return Err(CliError::AllFailed(failed));
    }
    let ok: Vec<&StageMetrics> = runs.iter().filter_map(|r| r.report.metrics.as_ref()).collect();
    let aggregate = Aggregate {
        images: runs.len(),
        failed,
        dff: MeanMetrics::of(ok.iter().map(|m| &m.dff)).expect("non-empty"),
        global: MeanMetrics::of(ok.iter().map(|m| &m.global)).expect("non-empty"),
        refined: if cfg.refine.enabled {
            MeanMetrics::of(ok.iter().filter_map(|m| m.refined.as_ref()))
        } else {
            None
        },
    };
    let timings = TimingReport {
        images: runs
            .iter()
            .map(|r| ImageTimings {
                name: r.report.name.clone(),
                stages: r.timings,
            })
            .collect(),
        total_ms,
    };
    let mut maps = Vec::with_capacity(runs.len());
    let mut images = Vec::with_capacity(runs.len());
    for r in runs {
        images.push(r.report);
        maps.push(r.maps);
    }
    Ok((
        RunOutcome {
            report: RunReport {
                schema_version: SCHEMA_VERSION,
                config: cfg.clone(),
                images,
                aggregate,
            },
            timings,
        },
        maps,
    ))
}

/// Runs the pipeline and writes `report.json`, `timings.json` and, when
/// enabled, per-image maps under `maps/<name>/`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunOutcome> {
    let (outcome, maps) = run_in_memory(cfg)?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    io::write_json(&outcome.report, &out.join(REPORT_NAME))?;
    io::write_json(&outcome.timings, &out.join(TIMINGS_NAME))?;
    if cfg.write_maps {
        let entries = discover(cfg)?;
        for (entry, fused) in entries.iter().zip(&maps) {
            if let Some(f) = fused {
                let gt = io::read_depth(&entry.gt, cfg.inputs.gt_png_scale_mm).ok();
                write_maps(&out.join("maps").join(&entry.name), f, gt.as_ref())?;
            }
        }
    }
    Ok(outcome)
}
