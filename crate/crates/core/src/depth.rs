//! Dense depth maps and validity masks.
//!
//! Storage is row-major with the origin at the top-left pixel. Invalid pixels
//! are tracked by a [`Mask`] rather than a sentinel value, so every reduction
//! works over an explicit pixel count.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_shape, Error, Result};

/// Physical meaning of the values stored in a [`DepthMap`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthUnit {
    Meters,
    Disparity,
    /// Relative depth, defined only up to an affine transform.
    Dimensionless,
}

impl DepthUnit {
    /// Meters and disparity must be strictly positive to be valid.
    fn requires_positive(self) -> bool {
        matches!(self, DepthUnit::Meters | DepthUnit::Disparity)
    }
}

/// Per-pixel boolean validity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        check_dims(width, height)?;
        if bits.len() != width * height {
            return Err(Error::Length {
                expected: width * height,
                actual: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![value; width * height],
        }
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

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, idx: usize) -> bool {
        self.bits[idx]
    }

    /// Number of set pixels (`M` in the metric definitions).
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        ensure_same_shape(self.dims(), other.dims())?;
        Ok(Mask {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| *a && *b)
                .collect(),
        })
    }
}

/// A dense grid of depth-like values with an attached validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Mask,
    unit: DepthUnit,
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::param(format!(
            "grid dimensions must be at least 1x1, got {width}x{height}"
        )));
    }
    Ok(())
}

/// Builds a metric depth map. Non-finite and non-positive entries are marked
/// invalid.
pub fn make_depth_map(width: usize, height: usize, values: Vec<f64>) -> Result<DepthMap> {
    DepthMap::new(width, height, values, DepthUnit::Meters)
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>, unit: DepthUnit) -> Result<Self> {
        let bits = vec![true; values.len()];
        Self::with_validity(width, height, values, bits, unit)
    }

    /// Like [`DepthMap::new`] but starting from a caller-supplied validity.
    /// Values that break the unit's invariants are still invalidated.
    pub fn with_validity(
        width: usize,
        height: usize,
        values: Vec<f64>,
        mut bits: Vec<bool>,
        unit: DepthUnit,
    ) -> Result<Self> {
        check_dims(width, height)?;
        let expected = width * height;
        if values.len() != expected {
            return Err(Error::Length {
                expected,
                actual: values.len(),
            });
        }
        if bits.len() != expected {
            return Err(Error::Length {
                expected,
                actual: bits.len(),
            });
        }
        let positive = unit.requires_positive();
        for (bit, v) in bits.iter_mut().zip(&values) {
            if !v.is_finite() || (positive && *v <= 0.0) {
                *bit = false;
            }
        }
        Ok(Self {
            width,
            height,
            values,
            valid: Mask {
                width,
                height,
                bits,
            },
            unit,
        })
    }

    /// Constant map, handy for tests and fallbacks.
    pub fn constant(width: usize, height: usize, value: f64, unit: DepthUnit) -> Result<Self> {
        Self::new(width, height, vec![value; width * height], unit)
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

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn unit(&self) -> DepthUnit {
        self.unit
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn validity(&self) -> &Mask {
        &self.valid
    }

    #[inline]
    pub fn value(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, idx: usize) -> bool {
        self.valid.bits[idx]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.count()
    }

    /// Valid pixels whose value lies in `[min_depth, max_depth]`.
    pub fn valid_mask(&self, min_depth: f64, max_depth: f64) -> Result<Mask> {
        if !(min_depth < max_depth) {
            return Err(Error::param(format!(
                "min_depth ({min_depth}) must be below max_depth ({max_depth})"
            )));
        }
        let bits = self
            .values
            .iter()
            .zip(&self.valid.bits)
            .map(|(v, ok)| *ok && *v >= min_depth && *v <= max_depth)
            .collect();
        Ok(Mask {
            width: self.width,
            height: self.height,
            bits,
        })
    }

    /// Per-pixel `k / depth`.
    pub fn depth_to_disparity(&self, k: f64) -> Result<DepthMap> {
        if self.unit != DepthUnit::Meters {
            return Err(Error::param(format!(
                "depth_to_disparity expects a metric map, got {:?}",
                self.unit
            )));
        }
        self.reciprocal(k, DepthUnit::Disparity)
    }

    /// Inverse of [`DepthMap::depth_to_disparity`].
    pub fn disparity_to_depth(&self, k: f64) -> Result<DepthMap> {
        if self.unit != DepthUnit::Disparity {
            return Err(Error::param(format!(
                "disparity_to_depth expects a disparity map, got {:?}",
                self.unit
            )));
        }
        self.reciprocal(k, DepthUnit::Meters)
    }

    fn reciprocal(&self, k: f64, unit: DepthUnit) -> Result<DepthMap> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::param(format!("conversion constant must be > 0, got {k}")));
        }
        let values = self
            .values
            .iter()
            .zip(&self.valid.bits)
            .map(|(v, ok)| if *ok { k / v } else { *v })
            .collect();
        DepthMap::with_validity(
            self.width,
            self.height,
            values,
            self.valid.bits.clone(),
            unit,
        )
    }

    /// Same values with a different unit tag; validity is re-checked.
    pub fn retag(&self, unit: DepthUnit) -> DepthMap {
        DepthMap::with_validity(
            self.width,
            self.height,
            self.values.clone(),
            self.valid.bits.clone(),
            unit,
        )
        .expect("dimensions already checked")
    }

    /// Restricts validity to `mask`.
    pub fn masked(&self, mask: &Mask) -> Result<DepthMap> {
        let valid = self.valid.and(mask)?;
        Ok(DepthMap {
            valid,
            ..self.clone()
        })
    }
}
