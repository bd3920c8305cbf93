//! Thin-lens defocus synthesis.
//!
//! A focal stack is rendered from one sharp intensity image and its ground
//! truth depth: for every focus distance, each output pixel is the mean of
//! the input pixels inside a disc whose radius is the circle of confusion at
//! that pixel's own depth (gather formulation). Disc membership is decided by
//! center distance `dx² + dy² <= r²` and borders are clamp-to-edge. Gathering
//! keyed on the target pixel leaks a little across depth discontinuities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::ThinLensCamera;
use crate::depth::DepthMap;
use crate::error::{ensure_same_shape, Error, Result};
use crate::image::{FocalStack, Image};

/// Radii below this many pixels leave the pixel untouched.
pub const IDENTITY_RADIUS_PX: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlurSpec {
    /// Circle-of-confusion diameter on the sensor, meters.
    pub coc_diameter_m: f64,
    /// Disc radius in pixels after conversion and clamping.
    pub radius_px: f64,
}

/// Circle of confusion for a lens focused at `s1` imaging a point at `s2`.
///
/// `c = |s2 - s1| / s2 * f² / (N (s1 - f))`, converted to a pixel radius as
/// `c / (2 * pixel_pitch)` and clamped to `max_blur_radius_px`.
pub fn coc_diameter(s1: f64, s2: f64, camera: &ThinLensCamera) -> Result<BlurSpec> {
    let f = camera.focal_length_m;
    if !(s1 > f) {
        return Err(Error::Singularity {
            focus_m: s1,
            focal_m: f,
        });
    }
    if !(s2 > 0.0) || !s2.is_finite() {
        return Err(Error::param(format!("object distance must be > 0, got {s2}")));
    }
    let coc_diameter_m = (s2 - s1).abs() / s2 * (f * f) / (camera.f_number * (s1 - f));
    let radius_px = (coc_diameter_m / (2.0 * camera.pixel_pitch_m)).min(camera.max_blur_radius_px);
    Ok(BlurSpec {
        coc_diameter_m,
        radius_px,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    UniformDepth,
    /// Even steps in `1/d`; blur grows linearly in diopters.
    #[default]
    UniformDiopter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FocusSchedule {
    distances: Vec<f64>,
    spacing: Spacing,
}

impl FocusSchedule {
    /// Wraps explicit distances, checking they are positive and ascending.
    pub fn from_distances(distances: Vec<f64>, spacing: Spacing) -> Result<Self> {
        if distances.is_empty() {
            return Err(Error::param("focus schedule needs at least one distance"));
        }
        if distances.iter().any(|d| !d.is_finite() || *d <= 0.0) {
            return Err(Error::param("focus distances must be finite and positive"));
        }
        if distances.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("focus distances must be strictly increasing"));
        }
        Ok(Self { distances, spacing })
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }
}

/// `count` focus distances covering `[d_min, d_max]`, ascending. A single
/// distance is `d_min`.
pub fn make_focus_schedule(
    d_min: f64,
    d_max: f64,
    count: usize,
    spacing: Spacing,
) -> Result<FocusSchedule> {
    if count == 0 {
        return Err(Error::param("focus schedule count must be >= 1"));
    }
    if !(d_min > 0.0 && d_min < d_max) || !d_max.is_finite() {
        return Err(Error::param(format!(
            "focus range must satisfy 0 < d_min < d_max, got [{d_min}, {d_max}]"
        )));
    }
    if count == 1 {
        return FocusSchedule::from_distances(vec![d_min], spacing);
    }
    let steps = (count - 1) as f64;
    let mut distances: Vec<f64> = match spacing {
        Spacing::UniformDepth => (0..count)
            .map(|i| d_min + (d_max - d_min) * i as f64 / steps)
            .collect(),
        Spacing::UniformDiopter => {
            let (near, far) = (1.0 / d_min, 1.0 / d_max);
            (0..count)
                .map(|i| 1.0 / (near + (far - near) * i as f64 / steps))
                .collect()
        }
    };
    distances.sort_by(f64::total_cmp);
    distances[0] = d_min;
    distances[count - 1] = d_max;
    FocusSchedule::from_distances(distances, spacing)
}

/// Blur radius, in pixels, for every pixel of `gt_depth` when focused at `s1`.
/// Invalid depth pixels get radius 0 and are copied through.
pub fn radius_map(gt_depth: &DepthMap, camera: &ThinLensCamera, s1: f64) -> Result<Image> {
    camera.validate()?;
    // Surfaces the singularity even for an all-invalid map.
    coc_diameter(s1, s1, camera)?;
    let radii = (0..gt_depth.len())
        .map(|i| {
            if gt_depth.is_valid(i) {
                coc_diameter(s1, gt_depth.value(i), camera).map(|b| b.radius_px)
            } else {
                Ok(0.0)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Image::new(gt_depth.width(), gt_depth.height(), radii)
}

/// Uniform disc blur with a per-pixel radius.
pub fn render_with_radius_map(image: &Image, radii: &Image) -> Result<Image> {
    ensure_same_shape(image.dims(), radii.dims())?;
    let (w, h) = image.dims();
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, px) in row.iter_mut().enumerate() {
            *px = disc_mean(image, x, y, radii.at(x, y));
        }
    });
    Image::new(w, h, out)
}

fn disc_mean(image: &Image, x: usize, y: usize, radius: f64) -> f64 {
    let center = image.at(x, y);
    if !(radius >= IDENTITY_RADIUS_PX) {
        return center;
    }
    let r2 = radius * radius;
    let reach = radius.floor() as isize;
    let (cx, cy) = (x as isize, y as isize);
    // Accumulating deviations from the center keeps constant regions exact.
    let mut acc = 0.0;
    let mut count = 0usize;
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            if ((dx * dx + dy * dy) as f64) <= r2 {
                acc += image.clamped(cx + dx, cy + dy) - center;
                count += 1;
            }
        }
    }
    center + acc / count as f64
}

/// One defocused frame focused at `s1`.
pub fn render_defocus_frame(
    image: &Image,
    gt_depth: &DepthMap,
    camera: &ThinLensCamera,
    s1: f64,
) -> Result<Image> {
    ensure_same_shape(image.dims(), gt_depth.dims())?;
    let radii = radius_map(gt_depth, camera, s1)?;
    render_with_radius_map(image, &radii)
}

/// Renders one frame per schedule distance, nearest focus first.
pub fn synthesize_focal_stack(
    image: &Image,
    gt_depth: &DepthMap,
    camera: &ThinLensCamera,
    schedule: &FocusSchedule,
) -> Result<FocalStack> {
    ensure_same_shape(image.dims(), gt_depth.dims())?;
    let frames = schedule
        .distances()
        .par_iter()
        .map(|s1| render_defocus_frame(image, gt_depth, camera, *s1))
        .collect::<Result<Vec<_>>>()?;
    let stack = FocalStack::new(frames, schedule.distances().to_vec())?;
    stack.check_camera(camera)?;
    Ok(stack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth::make_depth_map;

    fn phone() -> ThinLensCamera {
        ThinLensCamera::default()
    }

    #[test]
    fn in_focus_plane_has_zero_coc() {
        let b = coc_diameter(1.0, 1.0, &phone()).unwrap();
        assert_eq!(b.coc_diameter_m, 0.0);
        assert_eq!(b.radius_px, 0.0);
    }

    #[test]
    fn worked_optics_example() {
        let (f, n, s1, s2) = (0.0068_f64, 1.85_f64, 1.0_f64, 2.0_f64);
        let direct = ((s2 - s1) / s2) * (f * f / (n * (s1 - f)));
        let b = coc_diameter(s1, s2, &phone()).unwrap();
        assert!((b.coc_diameter_m - direct).abs() <= 1e-12 * direct);
        assert!((b.coc_diameter_m - 1.258286075e-5).abs() < 1e-14);
        assert!((b.radius_px - direct / 2.4e-6).abs() < 1e-9);
        assert!((b.radius_px - 5.2428586).abs() < 1e-6);
    }

    #[test]
    fn radius_is_clamped() {
        let cam = ThinLensCamera {
            max_blur_radius_px: 3.0,
            ..phone()
        };
        let b = coc_diameter(1.0, 2.0, &cam).unwrap();
        assert_eq!(b.radius_px, 3.0);
        assert!(b.coc_diameter_m > 1e-5);
    }

    #[test]
    fn focus_inside_focal_length_is_singular() {
        assert!(matches!(
            coc_diameter(0.0068, 1.0, &phone()),
            Err(Error::Singularity { .. })
        ));
        assert!(matches!(
            coc_diameter(0.001, 1.0, &phone()),
            Err(Error::Singularity { .. })
        ));
    }

    #[test]
    fn coc_grows_with_diopter_offset_on_each_side() {
        // With s2 fixed, c rises strictly as |1/s2 - 1/s1| rises, separately for
        // focus in front of and behind the object.
        let cam = phone();
        let mut checked = 0;
        for s2 in [0.3, 0.8, 2.0, 5.0] {
            let near: Vec<f64> = (0..13).map(|i| s2 * (1.0 - 0.06 * i as f64)).collect();
            let far: Vec<f64> = (0..13).map(|i| s2 * (1.0 + 0.25 * i as f64)).collect();
            for side in [near, far] {
                let mut pairs: Vec<(f64, f64)> = side
                    .iter()
                    .map(|&s1| {
                        let offset = (1.0 / s2 - 1.0 / s1).abs();
                        (offset, coc_diameter(s1, s2, &cam).unwrap().coc_diameter_m)
                    })
                    .collect();
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                assert_eq!(pairs[0].1, 0.0);
                for w in pairs.windows(2) {
                    assert!(w[1].1 > w[0].1, "s2={s2}: {:?}", w);
                    checked += 1;
                }
            }
        }
        assert!(checked >= 96);
    }

    #[test]
    fn uniform_depth_schedule() {
        let s = make_focus_schedule(1.0, 3.0, 3, Spacing::UniformDepth).unwrap();
        assert_eq!(s.distances(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn uniform_diopter_schedule() {
        let s = make_focus_schedule(1.0, 3.0, 3, Spacing::UniformDiopter).unwrap();
        let d = s.distances();
        assert_eq!(d[0], 1.0);
        assert!((d[1] - 1.5).abs() < 1e-12);
        assert_eq!(d[2], 3.0);
    }

    #[test]
    fn single_entry_schedule_is_d_min() {
        for sp in [Spacing::UniformDepth, Spacing::UniformDiopter] {
            assert_eq!(make_focus_schedule(1.0, 3.0, 1, sp).unwrap().distances(), &[1.0]);
        }
    }

    #[test]
    fn schedule_rejects_bad_arguments() {
        assert!(make_focus_schedule(1.0, 3.0, 0, Spacing::UniformDepth).is_err());
        assert!(make_focus_schedule(3.0, 1.0, 3, Spacing::UniformDepth).is_err());
        assert!(make_focus_schedule(0.0, 1.0, 3, Spacing::UniformDepth).is_err());
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Image::filled(17, 11, 0.1).unwrap();
        let depth = DepthMap::new(
            17,
            11,
            (0..17 * 11).map(|i| 0.2 + 0.05 * (i % 7) as f64).collect(),
            crate::depth::DepthUnit::Meters,
        )
        .unwrap();
        let out = render_defocus_frame(&img, &depth, &phone(), 1.0).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.1));
    }

    #[test]
    fn in_focus_depth_copies_input() {
        let img = Image::from_fn(9, 7, |x, y| ((x * 31 + y * 17) % 13) as f64 / 13.0).unwrap();
        let depth = DepthMap::constant(9, 7, 0.75, crate::depth::DepthUnit::Meters).unwrap();
        let out = render_defocus_frame(&img, &depth, &phone(), 0.75).unwrap();
        assert_eq!(out, img);
    }

    fn disc_members(r: f64) -> Vec<(isize, isize)> {
        let reach = r.ceil() as isize + 1;
        let mut pts = Vec::new();
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                if ((dx * dx + dy * dy) as f64).sqrt() <= r {
                    pts.push((dx, dy));
                }
            }
        }
        pts
    }

    #[test]
    fn impulse_spreads_into_normalized_disc() {
        let (w, h, cx, cy) = (15usize, 15usize, 7isize, 7isize);
        let img = Image::from_fn(w, h, |x, y| if (x, y) == (7, 7) { 1.0 } else { 0.0 }).unwrap();
        let radii = Image::filled(w, h, 2.0).unwrap();
        let out = render_with_radius_map(&img, &radii).unwrap();
        let members = disc_members(2.0);
        assert_eq!(members.len(), 13);
        let area = members.len() as f64;
        for y in 0..h {
            for x in 0..w {
                let inside = members.contains(&(cx - x as isize, cy - y as isize));
                let expected = if inside { 1.0 / area } else { 0.0 };
                assert!((out.at(x, y) - expected).abs() < 1e-15, "({x},{y})");
            }
        }
        assert!((out.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn impulse_through_optics() {
        // Optics example: radius 5.2429 px, so the disc holds every lattice
        // point within that distance.
        let n = 21;
        let img = Image::from_fn(n, n, |x, y| if (x, y) == (10, 10) { 1.0 } else { 0.0 }).unwrap();
        let depth = DepthMap::constant(n, n, 2.0, crate::depth::DepthUnit::Meters).unwrap();
        let out = render_defocus_frame(&img, &depth, &phone(), 1.0).unwrap();
        let area = disc_members(5.242858646).len() as f64;
        assert!((out.at(10, 10) - 1.0 / area).abs() < 1e-15);
        assert!((out.at(15, 10) - 1.0 / area).abs() < 1e-15);
        assert_eq!(out.at(16, 10), 0.0);
    }

    #[test]
    fn edges_are_clamped() {
        // Left column bright: clamp-to-edge replicates it outward, so the
        // blurred corner is brighter than a zero-padded disc would give.
        let img = Image::from_fn(6, 6, |x, _| if x == 0 { 1.0 } else { 0.0 }).unwrap();
        let radii = Image::filled(6, 6, 1.0).unwrap();
        let out = render_with_radius_map(&img, &radii).unwrap();
        // members: center, left(clamped to x=0), right, up, down -> 4 of 5 bright.
        assert!((out.at(0, 0) - 4.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn stack_sizes_follow_schedule() {
        let img = Image::from_fn(12, 12, |x, y| ((x ^ y) & 1) as f64).unwrap();
        let depth = make_depth_map(12, 12, vec![0.5; 144]).unwrap();
        for count in [1, 5, 10] {
            let sched = make_focus_schedule(0.3, 1.2, count, Spacing::UniformDiopter).unwrap();
            let stack = synthesize_focal_stack(&img, &depth, &phone(), &sched).unwrap();
            assert_eq!(stack.len(), count);
            assert!(stack.distances().windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn single_frame_at_scene_depth_is_sharp() {
        let img = Image::from_fn(12, 12, |x, y| ((x ^ y) & 1) as f64).unwrap();
        let depth = make_depth_map(12, 12, vec![0.5; 144]).unwrap();
        let sched = FocusSchedule::from_distances(vec![0.5], Spacing::UniformDepth).unwrap();
        let stack = synthesize_focal_stack(&img, &depth, &phone(), &sched).unwrap();
        assert_eq!(stack.frames()[0], img);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let img = Image::filled(4, 4, 0.0).unwrap();
        let depth = make_depth_map(4, 3, vec![1.0; 12]).unwrap();
        assert!(matches!(
            render_defocus_frame(&img, &depth, &phone(), 1.0),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn render_rejects_focus_inside_focal_length() {
        let img = Image::filled(4, 4, 0.0).unwrap();
        let depth = make_depth_map(4, 4, vec![1.0; 16]).unwrap();
        assert!(matches!(
            render_defocus_frame(&img, &depth, &phone(), 0.001),
            Err(Error::Singularity { .. })
        ));
    }
}
