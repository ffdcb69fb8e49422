use thiserror::Error;

/// Errors raised by the registration library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("non-finite coordinate at point {index}")]
    NonFinitePoint { index: usize },
    #[error("not a rotation: {0}")]
    InvalidRotation(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no correspondence carries positive weight")]
    NoInliers,
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
