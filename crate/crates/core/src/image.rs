//! Single-channel intensity grids and focal stacks.

use crate::camera::ThinLensCamera;
use crate::error::{Error, Result};

/// Row-major single-channel grid of `f64` samples.
///
/// Used for intensity frames (values in `[0, 1]`) as well as for derived
/// per-pixel quantities such as focus-measure responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param(format!(
                "image dimensions must be at least 1x1, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Length {
                expected: width * height,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Sample with clamp-to-edge addressing.
    #[inline]
    pub fn clamped(&self, x: isize, y: isize) -> f64 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.data[cy * self.width + cx]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Frames of one scene ordered by ascending focus distance.
#[derive(Debug, Clone, PartialEq)]
pub struct FocalStack {
    frames: Vec<Image>,
    distances: Vec<f64>,
}

impl FocalStack {
    pub fn new(frames: Vec<Image>, distances: Vec<f64>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::param("focal stack needs at least one frame"));
        }
        if frames.len() != distances.len() {
            return Err(Error::Length {
                expected: frames.len(),
                actual: distances.len(),
            });
        }
        let dims = frames[0].dims();
        if let Some(bad) = frames.iter().find(|f| f.dims() != dims) {
            return Err(Error::Shape {
                left_w: dims.0,
                left_h: dims.1,
                right_w: bad.width(),
                right_h: bad.height(),
            });
        }
        if distances.iter().any(|d| !d.is_finite() || *d <= 0.0) {
            return Err(Error::param("focus distances must be finite and positive"));
        }
        if distances.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param(
                "focus distances must be strictly increasing",
            ));
        }
        Ok(Self { frames, distances })
    }

    /// Checks that every focus distance lies beyond the focal length.
    pub fn check_camera(&self, camera: &ThinLensCamera) -> Result<()> {
        match self
            .distances
            .iter()
            .find(|d| **d <= camera.focal_length_m)
        {
            Some(d) => Err(Error::Singularity {
                focus_m: *d,
                focal_m: camera.focal_length_m,
            }),
            None => Ok(()),
        }
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(v: f64) -> Image {
        Image::filled(3, 2, v).unwrap()
    }

    #[test]
    fn clamped_sampling_repeats_edges() {
        let img = Image::from_fn(3, 2, |x, y| (x + 10 * y) as f64).unwrap();
        assert_eq!(img.clamped(-4, 0), 0.0);
        assert_eq!(img.clamped(7, 5), 12.0);
        assert_eq!(img.clamped(1, -1), 1.0);
    }

    #[test]
    fn stack_requires_ascending_distances() {
        assert!(FocalStack::new(vec![frame(0.0), frame(1.0)], vec![1.0, 2.0]).is_ok());
        assert!(FocalStack::new(vec![frame(0.0), frame(1.0)], vec![2.0, 1.0]).is_err());
        assert!(FocalStack::new(vec![frame(0.0), frame(1.0)], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn stack_rejects_mixed_sizes_and_empty() {
        let other = Image::filled(2, 2, 0.0).unwrap();
        assert!(matches!(
            FocalStack::new(vec![frame(0.0), other], vec![1.0, 2.0]),
            Err(Error::Shape { .. })
        ));
        assert!(FocalStack::new(vec![], vec![]).is_err());
    }

    #[test]
    fn stack_distance_must_exceed_focal_length() {
        let cam = ThinLensCamera::default();
        let stack = FocalStack::new(vec![frame(0.0)], vec![0.005]).unwrap();
        assert!(matches!(
            stack.check_camera(&cam),
            Err(Error::Singularity { .. })
        ));
    }
}
