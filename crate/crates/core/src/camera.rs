use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Thin-lens optics used to turn depth into defocus blur.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThinLensCamera {
    pub focal_length_m: f64,
    pub f_number: f64,
    /// Sensor pixel pitch in meters.
    pub pixel_pitch_m: f64,
    /// Upper bound on the blur disc radius, in pixels.
    pub max_blur_radius_px: f64,
}

impl Default for ThinLensCamera {
    /// Phone-class optics: 6.8 mm, f/1.85, 1.2 µm pixels, 25 px blur cap.
    fn default() -> Self {
        Self {
            focal_length_m: 0.0068,
            f_number: 1.85,
            pixel_pitch_m: 1.2e-6,
            max_blur_radius_px: 25.0,
        }
    }
}

impl ThinLensCamera {
    pub fn new(
        focal_length_m: f64,
        f_number: f64,
        pixel_pitch_m: f64,
        max_blur_radius_px: f64,
    ) -> Result<Self> {
        let cam = Self {
            focal_length_m,
            f_number,
            pixel_pitch_m,
            max_blur_radius_px,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::param(format!("{name} must be > 0, got {v}")))
            }
        };
        positive("focal_length_m", self.focal_length_m)?;
        positive("f_number", self.f_number)?;
        positive("pixel_pitch_m", self.pixel_pitch_m)?;
        if !(self.max_blur_radius_px >= 0.0) || !self.max_blur_radius_px.is_finite() {
            return Err(Error::param(format!(
                "max_blur_radius_px must be >= 0, got {}",
                self.max_blur_radius_px
            )));
        }
        Ok(())
    }
}
