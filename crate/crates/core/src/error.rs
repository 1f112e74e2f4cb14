use thiserror::Error;

use crate::geometry::GeometryHash;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("mesh cannot resolve the layout: {0}")]
    MeshResolution(String),

    #[error("stiffness system is singular: {0}")]
    SingularSystem(String),

    #[error("linear solve did not converge: relative residual {residual:e}")]
    SolverDivergence { residual: f64 },

    #[error("geometry hash mismatch: expected {expected}, found {found}")]
    HashMismatch {
        expected: GeometryHash,
        found: GeometryHash,
    },

    #[error("touch at ({x:.3}, {y:.3}) with radius {radius:.3} mm lies outside the sensing domain")]
    OutOfDomain { x: f64, y: f64, radius: f64 },

    #[error("invalid phantom: {0}")]
    InvalidPhantom(String),

    #[error("reference voltage on channel {channel} is degenerate ({value:e} V)")]
    DegenerateReference { channel: usize, value: f64 },

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("electrode layout is not symmetric under {0}")]
    AsymmetricLayout(String),

    #[error("both images are constant; correlation is undefined")]
    ConstantImage,

    #[error("reference image has zero norm")]
    ZeroReference,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown touch id {0}")]
    UnknownTouchId(u32),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
