//! Timing comparison of the global scaling fits.
//!
//! Runs strictly sequentially: one fit at a time, no parallel work inside the
//! timed region.

use std::fmt;
use std::time::Instant;

use focusfuse_core::{fit_global_ls, fit_global_ransac, AffineScale, Mask, RansacConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::synthetic::affine_sample;

/// A fit configuration under test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum FitSpec {
    Ls,
    Ransac {
        iterations: usize,
        sample_size: usize,
        inlier_threshold: f64,
    },
}

impl FitSpec {
    pub fn ransac(iterations: usize, sample_size: usize) -> Self {
        FitSpec::Ransac {
            iterations,
            sample_size,
            inlier_threshold: RansacConfig::default().inlier_threshold,
        }
    }

    /// Least squares plus the three RANSAC settings of the scaling ablation.
    pub fn ablation_set() -> Vec<FitSpec> {
        vec![
            FitSpec::Ls,
            FitSpec::ransac(60, 5),
            FitSpec::ransac(100, 20),
            FitSpec::ransac(200, 50),
        ]
    }

    pub fn label(&self) -> String {
        match self {
            FitSpec::Ls => "least_squares".into(),
            FitSpec::Ransac {
                iterations,
                sample_size,
                ..
            } => format!("ransac_{iterations}_{sample_size}"),
        }
    }
}

impl fmt::Display for FitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchSettings {
    pub repeats: usize,
    pub seed: u64,
    /// Noise standard deviation, meters.
    pub noise: f64,
    pub outlier_fraction: f64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            repeats: 5,
            seed: 42,
            noise: 0.005,
            outlier_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub height: usize,
    pub width: usize,
    pub method: String,
    pub median_ms: f64,
    pub times_ms: Vec<f64>,
    /// RMSE between the fitted and the planted affine map over all pixels.
    pub rmse_vs_truth: f64,
    pub scale: f64,
    pub shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub settings: BenchSettings,
    pub truth: AffineScale,
    pub rows: Vec<BenchRow>,
}

impl BenchTable {
    pub fn row(&self, height: usize, width: usize, spec: &FitSpec) -> Option<&BenchRow> {
        let label = spec.label();
        self.rows
            .iter()
            .find(|r| r.height == height && r.width == width && r.method == label)
    }
}

impl fmt::Display for BenchTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>9}  {:<18} {:>11} {:>13}", "size", "method", "median ms", "rmse vs truth")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>9}  {:<18} {:>11.3} {:>13.3e}",
                format!("{}x{}", r.height, r.width),
                r.method,
                r.median_ms,
                r.rmse_vs_truth
            )?;
        }
        Ok(())
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median wall-clock time of each fit on synthetic affine-plus-noise data
/// of each `(height, width)`.
pub fn bench_global_scaling(
    sizes: &[(usize, usize)],
    methods: &[FitSpec],
    settings: &BenchSettings,
) -> Result<BenchTable> {
    if settings.repeats < 3 {
        return Err(CliError::Config(format!(
            "bench needs at least 3 repeats, got {}",
            settings.repeats
        )));
    }
    let truth = AffineScale {
        scale: 2.0,
        shift: 0.5,
    };
    let mut rows = Vec::new();
    for &(height, width) in sizes {
        if height == 0 || width == 0 {
            return Err(CliError::Config("bench sizes must be non-empty".into()));
        }
        let data = affine_sample(
            width,
            height,
            truth.scale,
            truth.shift,
            settings.noise,
            settings.outlier_fraction,
            5.0,
            settings.seed,
        );
        let mask = Mask::filled(width, height, true);
        for spec in methods {
            let mut times = Vec::with_capacity(settings.repeats);
            let mut fit = None;
            for _ in 0..settings.repeats {
                let start = Instant::now();
                let result = match spec {
                    FitSpec::Ls => fit_global_ls(&data.relative, &data.metric, &mask),
                    FitSpec::Ransac {
                        iterations,
                        sample_size,
                        inlier_threshold,
                    } => fit_global_ransac(
                        &data.relative,
                        &data.metric,
                        &mask,
                        &RansacConfig {
                            iterations: *iterations,
                            sample_size: *sample_size,
                            inlier_threshold: *inlier_threshold,
                            seed: settings.seed,
                        },
                    ),
                }?;
                times.push(start.elapsed().as_secs_f64() * 1e3);
                fit = Some(result);
            }
            let fit = fit.expect("repeats >= 3");
            let r = data.relative.values();
            let se: f64 = r
                .iter()
                .map(|x| (fit.apply(*x) - truth.apply(*x)).powi(2))
                .sum();
            rows.push(BenchRow {
                height,
                width,
                method: spec.label(),
                median_ms: median(&times),
                times_ms: times,
                rmse_vs_truth: (se / r.len() as f64).sqrt(),
                scale: fit.scale,
                shift: fit.shift,
            });
        }
    }
    Ok(BenchTable {
        settings: *settings,
        truth,
        rows,
    })
}
