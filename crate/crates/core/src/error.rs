use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("expected {expected} values, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    Shape {
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("thin-lens singularity: focus distance {focus_m} m must exceed focal length {focal_m} m")]
    Singularity { focus_m: f64, focal_m: f64 },
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("ransac found no consensus set with at least 2 inliers")]
    ConsensusFailure,
    #[error("mask selects no pixels")]
    EmptyMask,
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}

/// Fails with [`Error::Shape`] unless both grids are `w`x`h` equal.
pub(crate) fn ensure_same_shape(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Shape {
            left_w: a.0,
            left_h: a.1,
            right_w: b.0,
            right_h: b.1,
        })
    }
}
