//! Relative-to-metric depth fusion.
//!
//! 1. A global affine `metric ≈ scale · relative + shift` is fitted by least
//!    squares (or RANSAC) between the relative map and the DFF depth.
//! 2. The dense scale map is the pixel-wise ratio `global / dff`.
//! 3. The scale map is refined by uncertainty-weighted cross-bilateral
//!    smoothing guided by the globally scaled depth.
//! 4. The final depth is `global / refined`, so an unrefined scale map gives
//!    back the DFF depth and an all-ones map gives back the global depth.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::depth::{DepthMap, DepthUnit, Mask};
use crate::dff::UncertaintyMap;
use crate::error::{ensure_same_shape, Error, Result};

/// Dense scale maps ignore DFF depths below this, in meters.
pub const MIN_DFF_DEPTH_M: f64 = 1e-6;

/// Refinement falls back to a unit scale when the local weight drops below this.
pub const MIN_REFINE_WEIGHT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineScale {
    pub scale: f64,
    pub shift: f64,
}

impl AffineScale {
    pub const IDENTITY: AffineScale = AffineScale {
        scale: 1.0,
        shift: 0.0,
    };

    pub fn new(scale: f64, shift: f64) -> Result<Self> {
        if !scale.is_finite() || !shift.is_finite() || scale == 0.0 {
            return Err(Error::DegenerateFit(format!(
                "affine coefficients must be finite with non-zero scale, got ({scale}, {shift})"
            )));
        }
        Ok(Self { scale, shift })
    }

    #[inline]
    pub fn apply(&self, r: f64) -> f64 {
        self.scale * r + self.shift
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub iterations: usize,
    pub sample_size: usize,
    /// Absolute residual bound for inliers, meters.
    pub inlier_threshold: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            sample_size: 50,
            inlier_threshold: 0.05,
            seed: 42,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::param("ransac iterations must be >= 1"));
        }
        if self.sample_size < 2 {
            return Err(Error::param("ransac sample size must be >= 2"));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(Error::param("ransac inlier threshold must be > 0"));
        }
        Ok(())
    }
}

/// Row-major indices of pixels valid in `relative`, `metric` and `mask`.
fn fit_support(relative: &DepthMap, metric: &DepthMap, mask: &Mask) -> Result<Vec<usize>> {
    ensure_same_shape(relative.dims(), metric.dims())?;
    ensure_same_shape(relative.dims(), mask.dims())?;
    Ok((0..relative.len())
        .filter(|&i| mask.get(i) && relative.is_valid(i) && metric.is_valid(i))
        .collect())
}

/// Weighted least-squares line through `(r_i, m_i)` for the given indices,
/// accumulated sequentially in index order.
fn solve_ls(r: &[f64], m: &[f64], idx: &[usize], weights: Option<&[f64]>) -> Result<AffineScale> {
    if idx.len() < 2 {
        return Err(Error::DegenerateFit(format!(
            "need at least 2 valid pixels, got {}",
            idx.len()
        )));
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let (mut sw, mut sr, mut sm) = (0.0, 0.0, 0.0);
    for &i in idx {
        let wi = w(i);
        sw += wi;
        sr += wi * r[i];
        sm += wi * m[i];
    }
    if !(sw > 0.0) {
        return Err(Error::DegenerateFit("total weight is zero".into()));
    }
    let (mr, mm) = (sr / sw, sm / sw);
    // Centered normal equations.
    let (mut srr, mut srm, mut peak) = (0.0, 0.0, 0.0_f64);
    for &i in idx {
        let wi = w(i);
        let dr = r[i] - mr;
        srr += wi * dr * dr;
        srm += wi * dr * (m[i] - mm);
        peak = peak.max(r[i].abs());
    }
    if !(srr > sw * (1e-12 * peak).powi(2)) {
        return Err(Error::DegenerateFit("relative depth is constant over the fit support".into()));
    }
    let scale = srm / srr;
    AffineScale::new(scale, mm - scale * mr)
}

/// Least-squares `(scale, shift)` mapping `relative` onto `metric`.
pub fn fit_global_ls(relative: &DepthMap, metric: &DepthMap, mask: &Mask) -> Result<AffineScale> {
    let idx = fit_support(relative, metric, mask)?;
    solve_ls(relative.values(), metric.values(), &idx, None)
}

/// [`fit_global_ls`] with per-pixel non-negative weights, e.g. DFF confidence.
pub fn fit_global_ls_weighted(
    relative: &DepthMap,
    metric: &DepthMap,
    mask: &Mask,
    weights: &[f64],
) -> Result<AffineScale> {
    if weights.len() != relative.len() {
        return Err(Error::Length {
            expected: relative.len(),
            actual: weights.len(),
        });
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::param("fit weights must be finite and >= 0"));
    }
    let idx = fit_support(relative, metric, mask)?;
    solve_ls(relative.values(), metric.values(), &idx, Some(weights))
}

/// RANSAC affine fit.
///
/// Iteration `i` draws `sample_size` distinct valid pixels from a ChaCha8
/// stream keyed by `(seed, i)`, fits them by least squares and counts pixels
/// with `|m - (s·r + t)| <= inlier_threshold`. The largest consensus set
/// (earliest iteration on ties) is refitted by least squares.
pub fn fit_global_ransac(
    relative: &DepthMap,
    metric: &DepthMap,
    mask: &Mask,
    cfg: &RansacConfig,
) -> Result<AffineScale> {
    cfg.validate()?;
    let idx = fit_support(relative, metric, mask)?;
    if cfg.sample_size > idx.len() {
        return Err(Error::param(format!(
            "ransac sample size {} exceeds {} valid pixels",
            cfg.sample_size,
            idx.len()
        )));
    }
    let (r, m) = (relative.values(), metric.values());
    let mut best: Option<(usize, AffineScale)> = None;
    let mut drawn = Vec::with_capacity(cfg.sample_size);
    for iteration in 0..cfg.iterations {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(iteration as u64);
        drawn.clear();
        drawn.extend(sample(&mut rng, idx.len(), cfg.sample_size).into_iter().map(|k| idx[k]));
        drawn.sort_unstable();
        let Ok(model) = solve_ls(r, m, &drawn, None) else {
            continue;
        };
        let inliers = idx
            .iter()
            .filter(|&&i| (m[i] - model.apply(r[i])).abs() <= cfg.inlier_threshold)
            .count();
        if best.map_or(true, |(n, _)| inliers > n) {
            best = Some((inliers, model));
        }
    }
    let model = match best {
        Some((n, model)) if n >= 2 => model,
        _ => return Err(Error::ConsensusFailure),
    };
    let consensus: Vec<usize> = idx
        .iter()
        .copied()
        .filter(|&i| (m[i] - model.apply(r[i])).abs() <= cfg.inlier_threshold)
        .collect();
    solve_ls(r, m, &consensus, None).map_err(|_| Error::ConsensusFailure)
}

/// Metric depth `scale · r + shift`. Non-positive results become invalid.
pub fn apply_affine(relative: &DepthMap, t: &AffineScale) -> DepthMap {
    let values = relative.values().iter().map(|r| t.apply(*r)).collect();
    DepthMap::with_validity(
        relative.width(),
        relative.height(),
        values,
        relative.validity().bits().to_vec(),
        DepthUnit::Meters,
    )
    .expect("shape preserved")
}

/// Per-pixel positive multiplier with its own validity.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleMap {
    map: DepthMap,
}

impl ScaleMap {
    /// Non-finite or non-positive entries are masked out.
    pub fn new(width: usize, height: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        Ok(Self {
            map: DepthMap::with_validity(width, height, values, valid, DepthUnit::Disparity)?,
        })
    }

    pub fn ones(width: usize, height: usize) -> Result<Self> {
        let n = width * height;
        Self::new(width, height, vec![1.0; n], vec![true; n])
    }

    pub fn width(&self) -> usize {
        self.map.width()
    }

    pub fn height(&self) -> usize {
        self.map.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.map.dims()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        self.map.values()
    }

    pub fn validity(&self) -> &Mask {
        self.map.validity()
    }

    #[inline]
    pub fn value(&self, idx: usize) -> f64 {
        self.map.value(idx)
    }

    #[inline]
    pub fn is_valid(&self, idx: usize) -> bool {
        self.map.is_valid(idx)
    }
}

/// Pixel-wise `global / dff` over `mask`.
pub fn dense_scale_map(global: &DepthMap, dff: &DepthMap, mask: &Mask) -> Result<ScaleMap> {
    ensure_same_shape(global.dims(), dff.dims())?;
    ensure_same_shape(global.dims(), mask.dims())?;
    let n = global.len();
    let mut values = vec![1.0; n];
    let mut valid = vec![false; n];
    for i in 0..n {
        if mask.get(i) && global.is_valid(i) && dff.is_valid(i) && dff.value(i) >= MIN_DFF_DEPTH_M {
            values[i] = global.value(i) / dff.value(i);
            valid[i] = true;
        }
    }
    ScaleMap::new(global.width(), global.height(), values, valid)
}

/// Settings for [`refine_scale_map`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineParams {
    /// Spatial Gaussian sigma, pixels.
    pub sigma_spatial: f64,
    /// Guide similarity sigma on log-depth.
    pub sigma_guide: f64,
    pub iterations: usize,
    /// Output is clamped to `[1/s_max, s_max]`.
    pub s_max: f64,
    /// Neighbourhood half-width; `None` means `ceil(2 · sigma_spatial)`.
    pub radius: Option<usize>,
    /// Weight samples by DFF confidence `1 - uncertainty`.
    pub use_uncertainty: bool,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            sigma_spatial: 8.0,
            sigma_guide: 0.1,
            iterations: 3,
            s_max: 4.0,
            radius: None,
            use_uncertainty: true,
        }
    }
}

impl RefineParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_spatial > 0.0) || !(self.sigma_guide > 0.0) {
            return Err(Error::param("refinement sigmas must be > 0"));
        }
        if !(self.s_max >= 1.0) || !self.s_max.is_finite() {
            return Err(Error::param("refinement s_max must be finite and >= 1"));
        }
        Ok(())
    }

    fn window_radius(&self) -> usize {
        self.radius
            .unwrap_or_else(|| (2.0 * self.sigma_spatial).ceil() as usize)
    }
}

/// Edge-aware, confidence-weighted smoothing of a scale map.
///
/// Works on `log(scale)`. Each pass replaces every pixel by the weighted mean
/// of its neighbourhood, with weights
/// `spatial(σ_s) · guide_similarity(σ_g on log guide depth) · confidence`,
/// where confidence is `1 - uncertainty` on raw-valid pixels (1 when
/// uncertainty is disabled) and 0 on masked pixels. Pixels whose total weight
/// is below [`MIN_REFINE_WEIGHT`] fall back to a unit scale. Pixels with an
/// invalid guide stay invalid.
pub fn refine_scale_map(
    raw: &ScaleMap,
    uncertainty: &UncertaintyMap,
    guide: &DepthMap,
    params: &RefineParams,
) -> Result<ScaleMap> {
    use rayon::prelude::*;

    params.validate()?;
    ensure_same_shape(raw.dims(), uncertainty.dims())?;
    ensure_same_shape(raw.dims(), guide.dims())?;
    let (w, h) = raw.dims();
    let n = w * h;
    let confidence: Vec<f64> = (0..n)
        .map(|i| {
            if !raw.is_valid(i) || !guide.is_valid(i) {
                0.0
            } else if params.use_uncertainty {
                1.0 - uncertainty.value(i)
            } else {
                1.0
            }
        })
        .collect();
    let log_guide: Vec<f64> = (0..n)
        .map(|i| if guide.is_valid(i) { guide.value(i).max(f64::MIN_POSITIVE).ln() } else { 0.0 })
        .collect();
    let reach = params.window_radius() as isize;
    let spatial: Vec<f64> = {
        let side = (2 * reach + 1) as usize;
        let inv = 1.0 / (2.0 * params.sigma_spatial * params.sigma_spatial);
        (0..side * side)
            .map(|k| {
                let dx = (k % side) as isize - reach;
                let dy = (k / side) as isize - reach;
                (-((dx * dx + dy * dy) as f64) * inv).exp()
            })
            .collect()
    };
    let guide_inv = 1.0 / (2.0 * params.sigma_guide * params.sigma_guide);

    let mut log_scale: Vec<f64> = (0..n)
        .map(|i| if raw.is_valid(i) { raw.value(i).ln() } else { 0.0 })
        .collect();
    for _ in 0..params.iterations {
        let prev = log_scale;
        let mut next = vec![0.0; n];
        next.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for (x, out) in row.iter_mut().enumerate() {
                let i = y * w + x;
                if !guide.is_valid(i) {
                    *out = 0.0;
                    continue;
                }
                let (mut num, mut den) = (0.0, 0.0);
                let y0 = (y as isize - reach).max(0);
                let y1 = (y as isize + reach).min(h as isize - 1);
                let x0 = (x as isize - reach).max(0);
                let x1 = (x as isize + reach).min(w as isize - 1);
                for ny in y0..=y1 {
                    let krow = ((ny - y as isize + reach) * (2 * reach + 1)) as usize;
                    for nx in x0..=x1 {
                        let j = ny as usize * w + nx as usize;
                        let c = confidence[j];
                        if c <= 0.0 {
                            continue;
                        }
                        let dg = log_guide[j] - log_guide[i];
                        let weight =
                            spatial[krow + (nx - x as isize + reach) as usize] * (-dg * dg * guide_inv).exp() * c;
                        num += weight * prev[j];
                        den += weight;
                    }
                }
                *out = if den < MIN_REFINE_WEIGHT { 0.0 } else { num / den };
            }
        });
        log_scale = next;
    }

    let bound = params.s_max.ln();
    let values = log_scale.iter().map(|l| l.clamp(-bound, bound).exp()).collect();
    let valid = (0..n).map(|i| guide.is_valid(i)).collect();
    ScaleMap::new(w, h, values, valid)
}

/// Final depth `global / refined`; invalid where either input is.
pub fn apply_scale_map(global: &DepthMap, refined: &ScaleMap) -> Result<DepthMap> {
    ensure_same_shape(global.dims(), refined.dims())?;
    let n = global.len();
    let values = (0..n).map(|i| global.value(i) / refined.value(i)).collect();
    let valid = (0..n).map(|i| global.is_valid(i) && refined.is_valid(i)).collect();
    DepthMap::with_validity(global.width(), global.height(), values, valid, DepthUnit::Meters)
}
