use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {index} has a non-finite coordinate")]
    NonFinitePoint { index: usize },

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("voxel grid {n_l}x{n_w}x{n_h} has a zero dimension")]
    InvalidGrid { n_l: usize, n_w: usize, n_h: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("feature map extents do not overlap")]
    DisjointExtent,

    #[error("invalid feature map: {0}")]
    InvalidFeatureMap(String),

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Format(#[from] crate::io::FormatError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
