use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid layer: {0}")]
    InvalidLayer(String),

    #[error("invalid device profile: {0}")]
    InvalidProfile(String),

    #[error("arithmetic overflow computing {0}")]
    Overflow(&'static str),

    #[error("approximate load is only defined for unpadded convolutions (padding = {0})")]
    ApproxWithPadding(u64),

    #[error("layer {index}: unsupported layer kind `{kind}`")]
    UnknownKind { index: usize, kind: String },

    #[error("layer {index}: {message}")]
    LayerParse { index: usize, message: String },

    #[error("malformed {what}: {message}")]
    Parse { what: &'static str, message: String },

    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("layer {index}: device `{device_id}` not calibrated for FC layers (a_f missing)")]
    Uncalibrated { index: usize, device_id: String },

    #[error("layer {index}: {reason}")]
    NotEstimable { index: usize, reason: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(what: &'static str, err: impl std::fmt::Display) -> Self {
        Error::Parse { what, message: err.to_string() }
    }

    /// True when the failure is a missing device coefficient rather than bad data.
    pub fn is_calibration_gap(&self) -> bool {
        matches!(self, Error::Uncalibrated { .. })
    }
}
