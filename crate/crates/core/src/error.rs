use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The point is 90 degrees or more away from the tangency point.
    #[error("point is not projectable onto the tangent plane (angular distance >= 90 deg)")]
    BehindPlane,

    #[error("invalid spherical box: {0}")]
    InvalidBox(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("anchor list is empty")]
    EmptyAnchors,

    #[error("field of view {fov} deg is too large for a gnomonic projection (must be < 180)")]
    FovTooLarge { fov: f64 },

    #[error("patch has no alpha channel")]
    MissingAlpha,

    #[error("channel mismatch: {0}")]
    ChannelMismatch(String),

    #[error("no ground truth for any class")]
    NoGroundTruth,

    #[error("could not place object {object} after {attempts} attempts")]
    PlacementFailure { object: usize, attempts: usize },

    #[error("no source crops found")]
    EmptySources,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
