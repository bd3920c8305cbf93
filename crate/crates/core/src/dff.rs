//! Classical depth from focus.
//!
//! Each frame of a focal stack is scored with the sum-modified-Laplacian
//! (SML) focus measure. Every pixel takes the focus distance of its sharpest
//! frame, optionally refined with a parabola through the neighbouring slices,
//! and reports how peaked its response profile is as an uncertainty.

use rayon::prelude::*;

use crate::depth::{DepthMap, DepthUnit};
use crate::error::{ensure_same_shape, Error, Result};
use crate::image::{FocalStack, Image};

pub const DEFAULT_WINDOW: usize = 7;

/// Guards the peak-contrast ratio against a zero peak.
pub const UNCERTAINTY_EPS: f64 = 1e-8;

/// Per-pixel confidence loss in `[0, 1]`; 0 is fully confident, 1 means no
/// focus evidence at all.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl UncertaintyMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Length {
                expected: width * height,
                actual: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::param(format!("uncertainty {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn value(&self, idx: usize) -> f64 {
        self.values[idx]
    }
}

/// SML responses for every frame of a stack.
#[derive(Debug, Clone, PartialEq)]
pub struct FocusVolume {
    slices: Vec<Image>,
    distances: Vec<f64>,
}

impl FocusVolume {
    pub fn new(slices: Vec<Image>, distances: Vec<f64>) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::param("focus volume needs at least one slice"));
        }
        if slices.len() != distances.len() {
            return Err(Error::Length {
                expected: slices.len(),
                actual: distances.len(),
            });
        }
        let dims = slices[0].dims();
        for s in &slices {
            ensure_same_shape(dims, s.dims())?;
        }
        if slices
            .iter()
            .any(|s| s.data().iter().any(|v| !v.is_finite() || *v < 0.0))
        {
            return Err(Error::param("focus responses must be finite and >= 0"));
        }
        if distances.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("volume distances must be strictly increasing"));
        }
        Ok(Self { slices, distances })
    }

    pub fn slices(&self) -> &[Image] {
        &self.slices
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn depth(&self) -> usize {
        self.slices.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.slices[0].dims()
    }

    /// Response profile of pixel `idx` across all slices.
    pub fn profile(&self, idx: usize) -> impl Iterator<Item = f64> + '_ {
        self.slices.iter().map(move |s| s.data()[idx])
    }
}

fn check_window(window: usize) -> Result<()> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::param(format!(
            "focus window must be odd and >= 3, got {window}"
        )));
    }
    Ok(())
}

/// Sum-modified-Laplacian of `frame`, box-summed over a `window`x`window`
/// neighbourhood. Clamp-to-edge at the borders.
pub fn focus_measure(frame: &Image, window: usize) -> Result<Image> {
    check_window(window)?;
    let (w, h) = frame.dims();
    let mut ml = vec![0.0; w * h];
    ml.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let y = y as isize;
        for (x, out) in row.iter_mut().enumerate() {
            let x = x as isize;
            let c = 2.0 * frame.clamped(x, y);
            *out = (c - frame.clamped(x - 1, y) - frame.clamped(x + 1, y)).abs()
                + (c - frame.clamped(x, y - 1) - frame.clamped(x, y + 1)).abs();
        }
    });
    box_sum(&Image::new(w, h, ml)?, window / 2)
}

/// Separable box sum with clamp-to-edge addressing.
fn box_sum(src: &Image, half: usize) -> Result<Image> {
    let (w, h) = src.dims();
    let half = half as isize;
    let mut horiz = vec![0.0; w * h];
    horiz.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for dx in -half..=half {
                acc += src.clamped(x as isize + dx, y as isize);
            }
            *out = acc;
        }
    });
    let horiz = Image::new(w, h, horiz)?;
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for dy in -half..=half {
                acc += horiz.clamped(x as isize, y as isize + dy);
            }
            *out = acc;
        }
    });
    Image::new(w, h, out)
}

pub fn build_focus_volume(stack: &FocalStack, window: usize) -> Result<FocusVolume> {
    check_window(window)?;
    let slices = stack
        .frames()
        .par_iter()
        .map(|f| focus_measure(f, window))
        .collect::<Result<Vec<_>>>()?;
    FocusVolume::new(slices, stack.distances().to_vec())
}

/// Index of the largest value, lowest index on ties.
fn argmax(profile: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in profile.iter().enumerate().skip(1) {
        if *v > profile[best] {
            best = k;
        }
    }
    best
}

/// Sub-slice refinement: vertex of the parabola through three samples, in
/// index units relative to the middle one.
fn parabola_offset(prev: f64, peak: f64, next: f64) -> f64 {
    let curvature = prev - 2.0 * peak + next;
    if curvature >= 0.0 {
        return 0.0;
    }
    (0.5 * (prev - next) / curvature).clamp(-1.0, 1.0)
}

/// Per-pixel depth and uncertainty from a focus volume.
///
/// Depth is the focus distance of the peak slice. With `interpolate`, an
/// interior peak is shifted to the parabola vertex in index space and mapped
/// linearly between neighbouring distances. Uncertainty is
/// `1 - (peak - mean) / (peak + eps)`, or 1 where the peak is zero.
pub fn dff_depth(volume: &FocusVolume, interpolate: bool) -> Result<(DepthMap, UncertaintyMap)> {
    let (w, h) = volume.dims();
    let k = volume.depth();
    let dist = volume.distances();
    let per_pixel: Vec<(f64, f64)> = (0..w * h)
        .into_par_iter()
        .map(|idx| {
            let profile: Vec<f64> = volume.profile(idx).collect();
            let best = argmax(&profile);
            let peak = profile[best];
            let mut depth = dist[best];
            if interpolate && best > 0 && best + 1 < k {
                let t = parabola_offset(profile[best - 1], peak, profile[best + 1]);
                depth = if t < 0.0 {
                    dist[best] + t * (dist[best] - dist[best - 1])
                } else {
                    dist[best] + t * (dist[best + 1] - dist[best])
                };
                depth = depth.clamp(dist[best - 1], dist[best + 1]);
            }
            let uncertainty = if peak <= 0.0 {
                1.0
            } else {
                let mean = profile.iter().sum::<f64>() / k as f64;
                (1.0 - (peak - mean) / (peak + UNCERTAINTY_EPS)).clamp(0.0, 1.0)
            };
            (depth, uncertainty)
        })
        .collect();
    let (depths, unc): (Vec<f64>, Vec<f64>) = per_pixel.into_iter().unzip();
    Ok((
        DepthMap::new(w, h, depths, DepthUnit::Meters)?,
        UncertaintyMap::new(w, h, unc)?,
    ))
}
