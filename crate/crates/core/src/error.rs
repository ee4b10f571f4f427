use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("malformed input: {0}")]
    Input(String),

    #[error("configuration length {got} does not match graph order {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("color {color} at vertex {vertex} is outside 0..{q}")]
    ColorOutOfRange { vertex: usize, color: usize, q: usize },

    #[error("configuration is not a valid H-coloring (edge {0}-{1} violates the constraint graph)")]
    InvalidConfiguration(usize, usize),

    #[error("constraint graph is the complete graph with all self-loops; at least one hard constraint is required")]
    Unconstrained,

    #[error("constraint graph is disconnected")]
    DisconnectedConstraint,

    #[error("no valid configuration exists")]
    Infeasible,

    #[error("feasibility unknown: search budget of {0} node expansions exhausted")]
    UnknownFeasibility(u64),

    #[error("enumeration cap of {0} search nodes exceeded")]
    CapExceeded(u64),

    #[error("non-finite parameter value")]
    NonFinite,

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable tag used by the CLI error envelope.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parameter(_) => "parameter",
            Error::Input(_) => "input",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::ColorOutOfRange { .. } => "color_out_of_range",
            Error::InvalidConfiguration(..) => "invalid_configuration",
            Error::Unconstrained => "unconstrained_h",
            Error::DisconnectedConstraint => "disconnected_h",
            Error::Infeasible => "infeasible",
            Error::UnknownFeasibility(_) => "unknown_feasibility",
            Error::CapExceeded(_) => "cap_exceeded",
            Error::NonFinite => "non_finite",
            Error::Json(_) => "json",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
