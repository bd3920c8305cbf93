//! Synthetic scenes with known ground truth, used by the test suites, the
//! scaling bench and the demo dataset writer.

use std::fs;
use std::path::Path;

use focusfuse_core::{make_depth_map, DepthMap, DepthUnit, Image};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, Result};
use crate::io;

/// A sharp intensity image, its metric depth, and a relative depth map.
#[derive(Debug, Clone)]
pub struct Scene {
    pub name: String,
    pub image: Image,
    pub gt: DepthMap,
    pub relative: DepthMap,
    /// Pixels carrying texture in `image`.
    pub textured: Vec<bool>,
}

/// Per-pixel uniform noise in `[0.1, 0.9]`.
pub fn noise_texture(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..width * height).map(|_| rng.gen_range(0.1..0.9)).collect();
    Image::new(width, height, data).expect("non-empty texture")
}

/// Relative depth `a · gt + b`, plus an optional smooth multiplicative warp
/// `1 + warp · ((x - cx)² + (y - cy)²) / r²` that no global affine undoes.
pub fn relative_from_gt(gt: &DepthMap, a: f64, b: f64, warp: f64) -> DepthMap {
    let (w, h) = gt.dims();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let r2 = cx * cx + cy * cy;
    let values = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let bowl = 1.0 + warp * ((x - cx).powi(2) + (y - cy).powi(2)) / r2.max(1.0);
            (a * gt.value(i) + b) * bowl
        })
        .collect();
    DepthMap::with_validity(w, h, values, gt.validity().bits().to_vec(), DepthUnit::Dimensionless)
        .expect("shape preserved")
}

/// Textured left/right planes at `near` and `far` meters. When `flat_rows`
/// is non-zero, the bottom rows are a texture-less band at `flat_depth`.
pub fn two_plane_scene(
    width: usize,
    height: usize,
    near: f64,
    far: f64,
    flat_rows: usize,
    flat_depth: f64,
    seed: u64,
) -> Scene {
    let texture = noise_texture(width, height, seed);
    let textured: Vec<bool> = (0..width * height).map(|i| i / width < height - flat_rows).collect();
    let image = Image::from_fn(width, height, |x, y| {
        if textured[y * width + x] {
            texture.at(x, y)
        } else {
            0.5
        }
    })
    .expect("dims");
    let gt = make_depth_map(
        width,
        height,
        (0..width * height)
            .map(|i| {
                if !textured[i] {
                    flat_depth
                } else if i % width < width / 2 {
                    near
                } else {
                    far
                }
            })
            .collect(),
    )
    .expect("dims");
    let relative = relative_from_gt(&gt, 0.5, 0.1, 0.0);
    Scene {
        name: format!("two_plane_{seed}"),
        image,
        gt,
        relative,
        textured,
    }
}

/// Piecewise-planar layouts whose depths are drawn from `levels`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    VerticalSplit,
    HorizontalSplit,
    Quadrants,
    CentralBox,
}

impl Layout {
    pub const ALL: [Layout; 4] = [
        Layout::VerticalSplit,
        Layout::HorizontalSplit,
        Layout::Quadrants,
        Layout::CentralBox,
    ];

    fn region(self, x: usize, y: usize, w: usize, h: usize) -> usize {
        match self {
            Layout::VerticalSplit => usize::from(x >= w / 2),
            Layout::HorizontalSplit => usize::from(y >= h / 2),
            Layout::Quadrants => usize::from(x >= w / 2) + 2 * usize::from(y >= h / 2),
            Layout::CentralBox => {
                usize::from(x >= w / 4 && x < 3 * w / 4 && y >= h / 4 && y < 3 * h / 4)
            }
        }
    }

    fn label(self) -> &'static str {
        match self {
            Layout::VerticalSplit => "vsplit",
            Layout::HorizontalSplit => "hsplit",
            Layout::Quadrants => "quad",
            Layout::CentralBox => "box",
        }
    }
}

/// Fully textured piecewise-planar scene. Region `k` sits at
/// `levels[(k + offset) % levels.len()]`; relative depth carries a smooth
/// warp of strength `warp`.
pub fn layered_scene(
    layout: Layout,
    width: usize,
    height: usize,
    levels: &[f64],
    offset: usize,
    warp: f64,
    seed: u64,
) -> Scene {
    let image = noise_texture(width, height, seed);
    let gt = make_depth_map(
        width,
        height,
        (0..width * height)
            .map(|i| {
                let k = layout.region(i % width, i / width, width, height);
                levels[(k + offset) % levels.len()]
            })
            .collect(),
    )
    .expect("dims");
    let relative = relative_from_gt(&gt, 0.5, 0.1, warp);
    Scene {
        name: format!("{}_{seed}", layout.label()),
        image,
        gt,
        relative,
        textured: vec![true; width * height],
    }
}

/// Scenes for the refinement ablation: every layout, depths on the focus
/// schedule, relative depth warped by 15%.
pub fn corruption_suite(width: usize, height: usize, levels: &[f64], seed: u64) -> Vec<Scene> {
    Layout::ALL
        .iter()
        .enumerate()
        .map(|(k, layout)| layered_scene(*layout, width, height, levels, k, 0.15, seed + k as u64))
        .collect()
}

/// Writes scenes as a pipeline dataset: `rgb/`, `gt/`, `relative/` with one
/// file per scene name.
pub fn write_dataset(scenes: &[Scene], root: &Path) -> Result<()> {
    for sub in ["rgb", "gt", "relative"] {
        let dir = root.join(sub);
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    }
    for s in scenes {
        io::write_intensity_pfm(&s.image, &root.join("rgb").join(format!("{}.pfm", s.name)))?;
        io::write_pfm(&s.gt, &root.join("gt").join(format!("{}.pfm", s.name)))?;
        io::write_pfm(&s.relative, &root.join("relative").join(format!("{}.pfm", s.name)))?;
    }
    Ok(())
}

/// Outliers land at least this far from the clean value, meters.
pub const GROSS_OUTLIER_M: f64 = 0.25;

/// Relative/metric pair related by `metric = scale · relative + shift` plus
/// Gaussian-ish noise of standard deviation `noise`. A fraction of pixels
/// are gross outliers: their metric value is replaced by a uniform draw from
/// `[0, outlier_amplitude]` that lies at least [`GROSS_OUTLIER_M`] from the
/// clean value, much like a depth-from-focus pixel landing on a wrong slice.
pub struct AffineSample {
    pub relative: DepthMap,
    pub metric: DepthMap,
}

pub fn affine_sample(
    width: usize,
    height: usize,
    scale: f64,
    shift: f64,
    noise: f64,
    outlier_fraction: f64,
    outlier_amplitude: f64,
    seed: u64,
) -> AffineSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = width * height;
    let r: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    let m: Vec<f64> = r
        .iter()
        .map(|x| {
            // Sum of uniforms: zero-mean, unit variance, bounded.
            let z: f64 = (0..12).map(|_| rng.gen::<f64>()).sum::<f64>() - 6.0;
            let clean = scale * x + shift + noise * z;
            if rng.gen::<f64>() < outlier_fraction {
                gross_outlier(&mut rng, clean, outlier_amplitude)
            } else {
                clean
            }
        })
        .collect();
    AffineSample {
        relative: DepthMap::new(width, height, r, DepthUnit::Dimensionless).expect("dims"),
        metric: DepthMap::new(width, height, m, DepthUnit::Dimensionless).expect("dims"),
    }
}

/// Uniform on `[0, amplitude]` minus the band `clean ± GROSS_OUTLIER_M`.
fn gross_outlier(rng: &mut ChaCha8Rng, clean: f64, amplitude: f64) -> f64 {
    let lo = (clean - GROSS_OUTLIER_M).clamp(0.0, amplitude);
    let hi = (clean + GROSS_OUTLIER_M).clamp(0.0, amplitude);
    let allowed = amplitude - (hi - lo);
    if allowed <= 0.0 {
        return clean + GROSS_OUTLIER_M;
    }
    let u = rng.gen_range(0.0..allowed);
    if u < lo {
        u
    } else {
        u + (hi - lo)
    }
}
