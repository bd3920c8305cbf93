//! JSON pipeline configuration.
//!
//! Relative paths are resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use focusfuse_core::{
    make_depth_map, FocusSchedule, RansacConfig, RefineParams, Spacing, ThinLensCamera,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub inputs: Inputs,
    #[serde(default)]
    pub camera: ThinLensCamera,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub dff: DffConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub refine: RefineConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub corruption: CorruptionConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Also write every intermediate map as PFM.
    #[serde(default)]
    pub write_maps: bool,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    /// Ground-truth depth, one `.pfm` or 16-bit `.png` per image.
    pub gt_dir: PathBuf,
    /// Relative depth, one `.pfm` per image with the same stem.
    pub relative_dir: PathBuf,
    /// Sharp intensity images used to synthesize focal stacks.
    #[serde(default)]
    pub rgb_dir: Option<PathBuf>,
    /// Real focal stacks, one sub-directory per image stem.
    #[serde(default)]
    pub stack_dir: Option<PathBuf>,
    #[serde(default = "default_png_scale")]
    pub gt_png_scale_mm: f64,
}

fn default_png_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub d_min: f64,
    pub d_max: f64,
    pub count: usize,
    pub spacing: Spacing,
    /// Explicit distances override `d_min`/`d_max`/`count`.
    pub distances: Option<Vec<f64>>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            d_min: 0.3,
            d_max: 2.0,
            count: 5,
            spacing: Spacing::UniformDiopter,
            distances: None,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<FocusSchedule> {
        let s = match &self.distances {
            Some(d) => FocusSchedule::from_distances(d.clone(), self.spacing),
            None => focusfuse_core::make_focus_schedule(self.d_min, self.d_max, self.count, self.spacing),
        };
        s.map_err(|e| CliError::Config(format!("schedule: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DffConfig {
    pub window: usize,
    pub interpolate: bool,
}

impl Default for DffConfig {
    fn default() -> Self {
        Self {
            window: focusfuse_core::dff::DEFAULT_WINDOW,
            interpolate: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    #[default]
    Ls,
    Ransac,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub method: FitMethod,
    /// RANSAC settings; the seed is taken from the top-level `seed`.
    pub ransac: RansacConfig,
    /// Weight the least-squares fit by DFF confidence.
    pub confidence_weighted: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            method: FitMethod::Ls,
            ransac: RansacConfig::default(),
            confidence_weighted: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(flatten)]
    pub params: RefineParams,
}

fn yes() -> bool {
    true
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            params: RefineParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub min_depth: f64,
    pub max_depth: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self::TEN_METERS
    }
}

impl EvalConfig {
    pub const TEN_METERS: EvalConfig = EvalConfig {
        min_depth: 1e-3,
        max_depth: 10.0,
    };
    pub const TWO_METERS: EvalConfig = EvalConfig {
        min_depth: 1e-3,
        max_depth: 2.0,
    };
}

/// Test-harness fault injection into the focus volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionConfig {
    /// Fraction of pixels whose focus responses are replaced by a near-flat
    /// random profile.
    pub fraction: f64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self { fraction: 0.0 }
    }
}

impl PipelineConfig {
    /// Config with default settings for the given inputs.
    pub fn new(inputs: Inputs) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            inputs,
            camera: ThinLensCamera::default(),
            schedule: ScheduleConfig::default(),
            dff: DffConfig::default(),
            fit: FitConfig::default(),
            refine: RefineConfig::default(),
            eval: EvalConfig::default(),
            corruption: CorruptionConfig::default(),
            output_dir: default_output_dir(),
            seed: default_seed(),
            write_maps: false,
        }
    }

    /// Parses a config and makes its relative paths absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.inputs.gt_dir);
        fix(&mut self.inputs.relative_dir);
        if let Some(p) = self.inputs.rgb_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = self.inputs.stack_dir.as_mut() {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    /// Checks parameters and that every referenced input directory exists.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |what: &str, e: focusfuse_core::Error| CliError::Config(format!("{what}: {e}"));
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.camera.validate().map_err(|e| cfg_err("camera", e))?;
        let schedule = self.schedule.build()?;
        if let Some(d) = schedule.distances().iter().find(|d| **d <= self.camera.focal_length_m) {
            return Err(CliError::Config(format!(
                "schedule distance {d} m is inside the focal length"
            )));
        }
        if self.dff.window < 3 || self.dff.window % 2 == 0 {
            return Err(CliError::Config(format!(
                "dff.window must be odd and >= 3, got {}",
                self.dff.window
            )));
        }
        if self.fit.method == FitMethod::Ransac {
            self.fit.ransac.validate().map_err(|e| cfg_err("fit.ransac", e))?;
        }
        self.refine.params.validate().map_err(|e| cfg_err("refine", e))?;
        make_depth_map(1, 1, vec![1.0])
            .expect("unit map")
            .valid_mask(self.eval.min_depth, self.eval.max_depth)
            .map_err(|e| cfg_err("eval", e))?;
        if !(0.0..=1.0).contains(&self.corruption.fraction) {
            return Err(CliError::Config("corruption.fraction must lie in [0, 1]".into()));
        }
        if !(self.inputs.gt_png_scale_mm > 0.0) {
            return Err(CliError::Config("inputs.gt_png_scale_mm must be > 0".into()));
        }
        if self.inputs.rgb_dir.is_none() && self.inputs.stack_dir.is_none() {
            return Err(CliError::Config(
                "inputs need rgb_dir (to synthesize stacks) or stack_dir".into(),
            ));
        }
        let dirs = [
            Some(&self.inputs.gt_dir),
            Some(&self.inputs.relative_dir),
            self.inputs.rgb_dir.as_ref(),
            self.inputs.stack_dir.as_ref(),
        ];
        for dir in dirs.into_iter().flatten() {
            if !dir.is_dir() {
                return Err(CliError::Config(format!(
                    "input directory {} does not exist",
                    dir.display()
                )));
            }
        }
        Ok(())
    }

    /// RANSAC settings with the run seed applied.
    pub fn ransac(&self) -> RansacConfig {
        RansacConfig {
            seed: self.seed,
            ..self.fit.ransac
        }
    }
}

/// Processing sections of a config file, for the single-step subcommands.
/// Missing sections take their defaults and `inputs` is not required.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default)]
pub struct Settings {
    pub camera: ThinLensCamera,
    pub schedule: ScheduleConfig,
    pub dff: DffConfig,
    pub fit: FitConfig,
    pub refine: RefineConfig,
    pub eval: EvalConfig,
    pub seed: Option<u64>,
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}
