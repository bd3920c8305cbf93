//! Metric depth from focal stacks and relative depth.
//!
//! The crate covers the numerical side of the fusion pipeline:
//!
//! - [`depth`], [`image`], [`camera`]: depth maps with validity masks,
//!   intensity frames, focal stacks and thin-lens optics.
//! - [`optics`]: circle-of-confusion blur and focal-stack synthesis from a
//!   sharp image plus ground-truth depth.
//! - [`dff`]: sum-modified-Laplacian depth from focus with an uncertainty map.
//! - [`fusion`]: global least-squares / RANSAC affine alignment of relative
//!   depth, dense scale maps, and edge-aware scale refinement.
//! - [`metrics`]: RMSE / AbsRel / δ accuracies and the scale-invariant and
//!   multi-scale gradient losses.

pub mod camera;
pub mod depth;
pub mod dff;
pub mod error;
pub mod fusion;
pub mod image;
pub mod metrics;
pub mod optics;

pub use camera::ThinLensCamera;
pub use depth::{make_depth_map, DepthMap, DepthUnit, Mask};
pub use dff::{build_focus_volume, dff_depth, focus_measure, FocusVolume, UncertaintyMap};
pub use error::{Error, Result};
pub use fusion::{
    apply_affine, apply_scale_map, dense_scale_map, fit_global_ls, fit_global_ls_weighted,
    fit_global_ransac, refine_scale_map, AffineScale, RansacConfig, RefineParams, ScaleMap,
};
pub use image::{FocalStack, Image};
pub use metrics::{compute_metrics, grad_loss, silog_loss, total_loss, LossParams, MetricsReport};
pub use optics::{
    coc_diameter, make_focus_schedule, render_defocus_frame, synthesize_focal_stack, BlurSpec,
    FocusSchedule, Spacing,
};
