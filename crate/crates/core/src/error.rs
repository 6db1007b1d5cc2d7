use thiserror::Error;

/// Failures of the Lie-group toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LieError {
    #[error("matrix is not skew-symmetric (symmetric part {defect:e})")]
    NotSkew { defect: f64 },
    #[error("matrix is not in se(3) (bottom row {defect:e})")]
    NotSe3 { defect: f64 },
    #[error("matrix is not a rotation (orthogonality defect {orthogonality:e}, det {det})")]
    NotRotation { orthogonality: f64, det: f64 },
    #[error("rotation angle {angle} is too close to pi for a principal logarithm")]
    AngleNearPi { angle: f64 },
    #[error("weight matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Failures of the central and decoupled filters.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("{matrix} lost positive definiteness{}", robot.map(|r| format!(" (robot {r})")).unwrap_or_default())]
    NonPositiveDefinite {
        matrix: &'static str,
        robot: Option<usize>,
    },
    #[error("invalid robot index {index} (n = {n})")]
    IndexError { index: usize, n: usize },
    #[error("robot {0} cannot observe itself")]
    SelfObservation(usize),
    #[error("measurement for robot {got} delivered to node {node}")]
    WrongRobot { node: usize, got: usize },
    #[error("epoch mismatch: node at epoch {node_epoch} t={node_t}, message at epoch {msg_epoch} t={msg_t}")]
    EpochMismatch {
        node_epoch: u64,
        node_t: f64,
        msg_epoch: u64,
        msg_t: f64,
    },
    #[error("no propagation token from robot {0}")]
    MissingToken(usize),
    #[error("Woodbury core matrix is singular (condition {condition:e})")]
    SingularCore { condition: f64 },
    #[error("thin SVD did not reproduce its input (defect {defect:e})")]
    SvdFailed { defect: f64 },
    #[error("noise matrix {0} is singular")]
    SingularNoise(&'static str),
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("expected one velocity measurement per robot ({expected}), got {got}")]
    VelocityCount { expected: usize, got: usize },
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// Failures of the binary message codec.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum WireError {
    #[error("message truncated at byte {0}")]
    Truncated(usize),
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("unsupported wire version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown update kind {0}")]
    UnknownUpdateKind(u8),
    #[error("{0} trailing bytes after message")]
    TrailingBytes(usize),
    #[error("factor payload of {scalars} scalars exceeds the bound {bound}")]
    PayloadTooLarge { scalars: usize, bound: usize },
    #[error("malformed field {0}")]
    Malformed(&'static str),
    #[error(transparent)]
    Lie(#[from] LieError),
}
