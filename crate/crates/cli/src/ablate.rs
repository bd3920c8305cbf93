//! One-factor ablations over the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{FitMethod, PipelineConfig};
use crate::error::{CliError, Result};
use crate::io;
use crate::pipeline::{self, Aggregate};

pub const ABLATION_NAME: &str = "ablation.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    StackSize,
    Uncertainty,
    FitMethod,
    Refinement,
}

impl FromStr for Axis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "stack_size" => Ok(Axis::StackSize),
            "uncertainty" => Ok(Axis::Uncertainty),
            "fit_method" => Ok(Axis::FitMethod),
            "refinement" => Ok(Axis::Refinement),
            other => Err(CliError::Config(format!(
                "unknown ablation axis {other:?} (stack_size, uncertainty, fit_method, refinement)"
            ))),
        }
    }
}

/// Configurations compared along `axis`, all else held fixed.
pub fn variants(base: &PipelineConfig, axis: Axis) -> Result<Vec<(String, PipelineConfig)>> {
    let with = |label: &str, f: &dyn Fn(&mut PipelineConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c.output_dir = base.output_dir.join(label);
        (label.to_string(), c)
    };
    Ok(match axis {
        Axis::StackSize => {
            if base.inputs.stack_dir.is_some() || base.schedule.distances.is_some() {
                return Err(CliError::Config(
                    "stack_size ablation needs synthesized stacks with a d_min/d_max/count schedule".into(),
                ));
            }
            vec![
                with("stack_5", &|c| c.schedule.count = 5),
                with("stack_10", &|c| c.schedule.count = 10),
            ]
        }
        Axis::Uncertainty => vec![
            with("uncertainty_on", &|c| {
                c.refine.enabled = true;
                c.refine.params.use_uncertainty = true;
            }),
            with("uncertainty_off", &|c| {
                c.refine.enabled = true;
                c.refine.params.use_uncertainty = false;
            }),
        ],
        Axis::FitMethod => vec![
            with("least_squares", &|c| c.fit.method = FitMethod::Ls),
            with("ransac", &|c| c.fit.method = FitMethod::Ransac),
        ],
        Axis::Refinement => vec![
            with("refinement_on", &|c| c.refine.enabled = true),
            with("refinement_off", &|c| c.refine.enabled = false),
        ],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub axis: Axis,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<16} {:>10} {:>10} {:>8} {:>6} {:>6} {:>6}",
            "variant", "mse", "rmse", "absrel", "d1", "d2", "d3"
        )?;
        for r in &self.rows {
            let m = r.aggregate.final_stage();
            writeln!(
                f,
                "{:<16} {:>10.3e} {:>10.4} {:>8.4} {:>6.3} {:>6.3} {:>6.3}",
                r.label, m.mse, m.rmse, m.absrel, m.delta1, m.delta2, m.delta3
            )?;
        }
        Ok(())
    }
}

/// Runs every variant (each writing its own report under
/// `<output_dir>/<label>/`) and writes the side-by-side `ablation.json`.
pub fn ablate(base: &PipelineConfig, axis: Axis) -> Result<AblationReport> {
    let mut rows = Vec::new();
    for (label, cfg) in variants(base, axis)? {
        let outcome = pipeline::run_pipeline(&cfg)?;
        rows.push(AblationRow {
            label,
            aggregate: outcome.report.aggregate,
        });
    }
    let report = AblationReport { axis, rows };
    std::fs::create_dir_all(&base.output_dir).map_err(|e| CliError::io(&base.output_dir, e))?;
    io::write_json(&report, &base.output_dir.join(ABLATION_NAME))?;
    Ok(report)
}
