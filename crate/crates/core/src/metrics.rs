//! Depth evaluation metrics and training losses.
//!
//! All reductions run sequentially over pixels in row-major order with `f64`
//! accumulators so results are reproducible bit-for-bit.

use serde::{Deserialize, Serialize};

use crate::depth::{DepthMap, Mask};
use crate::error::{ensure_same_shape, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossParams {
    /// Added inside the logarithms.
    pub alpha: f64,
    /// Weight of the squared-mean term in the scale-invariant loss.
    pub beta: f64,
    pub grad_weight: f64,
    /// Pyramid levels in the gradient loss.
    pub num_scales: usize,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            alpha: 1e-7,
            beta: 0.15,
            grad_weight: 0.5,
            num_scales: 4,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::param("alpha must be > 0"));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::param("beta must be >= 0"));
        }
        if self.num_scales == 0 {
            return Err(Error::param("num_scales must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mse: f64,
    pub rmse: f64,
    pub absrel: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub pixel_count: usize,
}

/// Pixels selected by `mask` and valid in both maps.
fn support(pred: &DepthMap, gt: &DepthMap, mask: &Mask) -> Result<Vec<usize>> {
    ensure_same_shape(pred.dims(), gt.dims())?;
    ensure_same_shape(pred.dims(), mask.dims())?;
    let idx: Vec<usize> = (0..pred.len())
        .filter(|&i| mask.get(i) && pred.is_valid(i) && gt.is_valid(i))
        .collect();
    if idx.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(idx)
}

/// MSE, RMSE, AbsRel and δ accuracies of `pred` against `gt`.
pub fn compute_metrics(pred: &DepthMap, gt: &DepthMap, mask: &Mask) -> Result<MetricsReport> {
    let idx = support(pred, gt, mask)?;
    let thresholds = [1.25_f64, 1.25_f64.powi(2), 1.25_f64.powi(3)];
    let (mut se, mut rel) = (0.0, 0.0);
    let mut hits = [0usize; 3];
    for &i in &idx {
        let (d, p) = (gt.value(i), pred.value(i));
        se += (d - p) * (d - p);
        rel += (d - p).abs() / d;
        let ratio = (p / d).max(d / p);
        for (hit, t) in hits.iter_mut().zip(&thresholds) {
            if ratio < *t {
                *hit += 1;
            }
        }
    }
    let m = idx.len() as f64;
    let mse = se / m;
    Ok(MetricsReport {
        mse,
        rmse: mse.sqrt(),
        absrel: rel / m,
        delta1: hits[0] as f64 / m,
        delta2: hits[1] as f64 / m,
        delta3: hits[2] as f64 / m,
        pixel_count: idx.len(),
    })
}

/// Scale-invariant log loss `10 · sqrt(var(g) + β · mean(g)²)` with
/// `g = log(pred + α) - log(gt + α)` and population variance.
pub fn silog_loss(pred: &DepthMap, gt: &DepthMap, mask: &Mask, params: &LossParams) -> Result<f64> {
    params.validate()?;
    let idx = support(pred, gt, mask)?;
    let g: Vec<f64> = idx
        .iter()
        .map(|&i| (pred.value(i) + params.alpha).ln() - (gt.value(i) + params.alpha).ln())
        .collect();
    let m = g.len() as f64;
    let mean = g.iter().sum::<f64>() / m;
    let var = g.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m;
    Ok(10.0 * (var + params.beta * mean * mean).max(0.0).sqrt())
}

/// Pyramid level: values with validity, `w`x`h`.
struct Level {
    w: usize,
    h: usize,
    pred: Vec<f64>,
    gt: Vec<f64>,
    valid: Vec<bool>,
}

impl Level {
    /// 2x2 mean pooling, floor on odd sizes; a pooled pixel is valid only if
    /// all four children are.
    fn pooled(&self) -> Option<Level> {
        let (w, h) = (self.w / 2, self.h / 2);
        if w == 0 || h == 0 {
            return None;
        }
        let mut next = Level {
            w,
            h,
            pred: vec![0.0; w * h],
            gt: vec![0.0; w * h],
            valid: vec![false; w * h],
        };
        for y in 0..h {
            for x in 0..w {
                let kids = [
                    2 * y * self.w + 2 * x,
                    2 * y * self.w + 2 * x + 1,
                    (2 * y + 1) * self.w + 2 * x,
                    (2 * y + 1) * self.w + 2 * x + 1,
                ];
                let o = y * w + x;
                next.valid[o] = kids.iter().all(|&k| self.valid[k]);
                next.pred[o] = kids.iter().map(|&k| self.pred[k]).sum::<f64>() / 4.0;
                next.gt[o] = kids.iter().map(|&k| self.gt[k]).sum::<f64>() / 4.0;
            }
        }
        Some(next)
    }

    /// `Σ |∇pred - ∇gt|` over forward differences in x and y whose two
    /// endpoints are valid.
    fn gradient_gap(&self) -> f64 {
        let mut acc = 0.0;
        for y in 0..self.h {
            for x in 0..self.w {
                let i = y * self.w + x;
                if !self.valid[i] {
                    continue;
                }
                if x + 1 < self.w && self.valid[i + 1] {
                    acc += ((self.pred[i + 1] - self.pred[i]) - (self.gt[i + 1] - self.gt[i])).abs();
                }
                if y + 1 < self.h && self.valid[i + self.w] {
                    let j = i + self.w;
                    acc += ((self.pred[j] - self.pred[i]) - (self.gt[j] - self.gt[i])).abs();
                }
            }
        }
        acc
    }
}

/// Multi-scale gradient matching loss, normalized by the full-resolution
/// pixel count at every scale.
pub fn grad_loss(pred: &DepthMap, gt: &DepthMap, mask: &Mask, params: &LossParams) -> Result<f64> {
    params.validate()?;
    support(pred, gt, mask)?;
    let (w, h) = pred.dims();
    let mut level = Some(Level {
        w,
        h,
        pred: pred.values().to_vec(),
        gt: gt.values().to_vec(),
        valid: (0..w * h)
            .map(|i| mask.get(i) && pred.is_valid(i) && gt.is_valid(i))
            .collect(),
    });
    let mut total = 0.0;
    for _ in 0..params.num_scales {
        let Some(current) = level else { break };
        total += current.gradient_gap();
        level = current.pooled();
    }
    Ok(total / (w * h) as f64)
}

/// `silog + grad_weight · grad`.
pub fn total_loss(pred: &DepthMap, gt: &DepthMap, mask: &Mask, params: &LossParams) -> Result<f64> {
    Ok(silog_loss(pred, gt, mask, params)? + params.grad_weight * grad_loss(pred, gt, mask, params)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth::make_depth_map;
    use proptest::prelude::*;

    fn map(values: Vec<f64>) -> DepthMap {
        let n = values.len();
        make_depth_map(n, 1, values).unwrap()
    }

    fn all(n: usize) -> Mask {
        Mask::filled(n, 1, true)
    }

    #[test]
    fn perfect_prediction() {
        let gt = map(vec![0.5, 1.0, 2.0, 4.0]);
        let r = compute_metrics(&gt, &gt, &all(4)).unwrap();
        assert_eq!((r.mse, r.rmse, r.absrel), (0.0, 0.0, 0.0));
        assert_eq!((r.delta1, r.delta2, r.delta3), (1.0, 1.0, 1.0));
        assert_eq!(r.pixel_count, 4);
    }

    #[test]
    fn twenty_percent_overshoot() {
        let gt = map(vec![0.5, 1.0, 2.0]);
        let pred = map(gt.values().iter().map(|v| 1.2 * v).collect());
        let r = compute_metrics(&pred, &gt, &all(3)).unwrap();
        assert_eq!((r.delta1, r.delta2, r.delta3), (1.0, 1.0, 1.0));
        assert!((r.absrel - 0.2).abs() < 1e-12);
    }

    #[test]
    fn thirty_percent_overshoot() {
        let gt = map(vec![0.5, 1.0, 2.0]);
        let pred = map(gt.values().iter().map(|v| 1.3 * v).collect());
        let r = compute_metrics(&pred, &gt, &all(3)).unwrap();
        assert_eq!(r.delta1, 0.0);
        assert_eq!(r.delta2, 1.0);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let gt = map(vec![1.0, 2.0]);
        let none = Mask::filled(2, 1, false);
        assert_eq!(compute_metrics(&gt, &gt, &none), Err(Error::EmptyMask));
        let p = LossParams::default();
        assert_eq!(silog_loss(&gt, &gt, &none, &p), Err(Error::EmptyMask));
        assert_eq!(grad_loss(&gt, &gt, &none, &p), Err(Error::EmptyMask));
        assert_eq!(total_loss(&gt, &gt, &none, &p), Err(Error::EmptyMask));
    }

    #[test]
    fn silog_examples() {
        let gt = map(vec![0.7, 1.3, 2.9]);
        // alpha must be negligible next to the depths for the closed forms.
        let p = LossParams { alpha: 1e-15, ..Default::default() };
        assert_eq!(silog_loss(&gt, &gt, &all(3), &p).unwrap(), 0.0);
        let e = map(gt.values().iter().map(|v| std::f64::consts::E * v).collect());
        let got = silog_loss(&e, &gt, &all(3), &p).unwrap();
        assert!((got - 10.0 * 0.15_f64.sqrt()).abs() < 1e-9, "{got}");
        let flat = LossParams { beta: 0.0, ..p };
        let k = map(gt.values().iter().map(|v| 3.7 * v).collect());
        assert!(silog_loss(&k, &gt, &all(3), &flat).unwrap() < 1e-9);
    }

    #[test]
    fn grad_loss_ignores_offsets() {
        let gt = make_depth_map(4, 4, (0..16).map(|i| 1.0 + (i * i % 7) as f64 * 0.1).collect()).unwrap();
        let m = Mask::filled(4, 4, true);
        let p = LossParams::default();
        assert_eq!(grad_loss(&gt, &gt, &m, &p).unwrap(), 0.0);
        let shifted = make_depth_map(4, 4, gt.values().iter().map(|v| v + 0.5).collect()).unwrap();
        assert!(grad_loss(&shifted, &gt, &m, &p).unwrap() < 1e-12);
    }

    #[test]
    fn ramp_against_doubled_ramp() {
        // Level 1: 12 horizontal differences of |2 - 1| = 1, vertical all zero.
        // Level 2 (2x2 pooled): ramp step doubles, 2 differences of |4 - 2| = 2.
        // Level 3 is 1x1 and contributes nothing: (12 + 4) / 16 = 1.
        let ramp = make_depth_map(4, 4, (0..16).map(|i| 1.0 + (i % 4) as f64).collect()).unwrap();
        let steep = make_depth_map(4, 4, (0..16).map(|i| 1.0 + 2.0 * (i % 4) as f64).collect()).unwrap();
        let got = grad_loss(&steep, &ramp, &Mask::filled(4, 4, true), &LossParams::default()).unwrap();
        assert!((got - 1.0).abs() < 1e-12, "{got}");
    }

    #[test]
    fn invalid_stencils_are_skipped() {
        let gt = make_depth_map(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let pred = make_depth_map(3, 1, vec![1.0, f64::NAN, 5.0]).unwrap();
        let p = LossParams { num_scales: 1, ..Default::default() };
        assert_eq!(grad_loss(&pred, &gt, &Mask::filled(3, 1, true), &p).unwrap(), 0.0);
    }

    #[test]
    fn total_is_weighted_sum() {
        let gt = make_depth_map(4, 4, (0..16).map(|i| 1.0 + (i % 5) as f64 * 0.3).collect()).unwrap();
        let pred = make_depth_map(4, 4, (0..16).map(|i| 1.1 + (i % 3) as f64 * 0.2).collect()).unwrap();
        let m = Mask::filled(4, 4, true);
        let p = LossParams::default();
        let (a, b) = (silog_loss(&pred, &gt, &m, &p).unwrap(), grad_loss(&pred, &gt, &m, &p).unwrap());
        assert_eq!(total_loss(&pred, &gt, &m, &p).unwrap(), a + 0.5 * b);
        let no_grad = LossParams { grad_weight: 0.0, ..p };
        assert_eq!(total_loss(&pred, &gt, &m, &no_grad).unwrap(), a);
    }

    #[test]
    fn invalid_loss_params() {
        let gt = map(vec![1.0]);
        let bad = LossParams { alpha: 0.0, ..Default::default() };
        assert!(silog_loss(&gt, &gt, &all(1), &bad).is_err());
        let bad = LossParams { num_scales: 0, ..Default::default() };
        assert!(grad_loss(&gt, &gt, &all(1), &bad).is_err());
    }

    proptest! {
        #[test]
        fn deltas_are_monotone_and_symmetric(
            pairs in prop::collection::vec((0.05f64..10.0, 0.05f64..10.0), 1..50),
        ) {
            let n = pairs.len();
            let pred = map(pairs.iter().map(|p| p.0).collect());
            let gt = map(pairs.iter().map(|p| p.1).collect());
            let a = compute_metrics(&pred, &gt, &all(n)).unwrap();
            let b = compute_metrics(&gt, &pred, &all(n)).unwrap();
            prop_assert!(a.delta1 <= a.delta2 && a.delta2 <= a.delta3);
            prop_assert_eq!((a.delta1, a.delta2, a.delta3), (b.delta1, b.delta2, b.delta3));
            prop_assert!((a.rmse * a.rmse - a.mse).abs() <= 1e-9 * a.mse.max(1e-300));
        }

        #[test]
        fn silog_is_scale_invariant_without_beta(
            pairs in prop::collection::vec((0.1f64..10.0, 0.1f64..10.0), 2..40),
            k in 0.1f64..10.0,
        ) {
            let n = pairs.len();
            let pred = map(pairs.iter().map(|p| p.0).collect());
            let scaled = map(pairs.iter().map(|p| k * p.0).collect());
            let gt = map(pairs.iter().map(|p| p.1).collect());
            let params = LossParams { alpha: 1e-15, beta: 0.0, ..Default::default() };
            let a = silog_loss(&pred, &gt, &all(n), &params).unwrap();
            let b = silog_loss(&scaled, &gt, &all(n), &params).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }

        #[test]
        fn metrics_ignore_pixel_order(
            pairs in prop::collection::vec((0.1f64..10.0, 0.1f64..10.0), 2..40),
        ) {
            let n = pairs.len();
            let mut rev = pairs.clone();
            rev.reverse();
            let eval = |v: &[(f64, f64)]| {
                let pred = map(v.iter().map(|p| p.0).collect());
                let gt = map(v.iter().map(|p| p.1).collect());
                (compute_metrics(&pred, &gt, &all(n)).unwrap(), silog_loss(&pred, &gt, &all(n), &LossParams::default()).unwrap())
            };
            let (a, sa) = eval(&pairs);
            let (b, sb) = eval(&rev);
            prop_assert!((a.mse - b.mse).abs() <= 1e-12 * a.mse.max(1e-300));
            prop_assert!((a.absrel - b.absrel).abs() <= 1e-12 * a.absrel.max(1e-300));
            prop_assert_eq!((a.delta1, a.delta2, a.delta3), (b.delta1, b.delta2, b.delta3));
            prop_assert!((sa - sb).abs() <= 1e-9 * sa.max(1e-12));
        }
    }
}
