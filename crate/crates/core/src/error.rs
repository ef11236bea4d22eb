use thiserror::Error;

/// Errors raised by the quantized compressive sensing engine.
#[derive(Debug, Error)]
pub enum QcsError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// sigma and beta*sqrt(d_i) are both zero, leaving a hard quantizer with no smooth likelihood.
    #[error("degenerate effective scale at measurement {measurement}{}", stage.map(|s| format!(" (stage {s})")).unwrap_or_default())]
    DegenerateScale {
        measurement: usize,
        stage: Option<usize>,
    },

    #[error("stability violation: {0}")]
    Stability(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("inconsistent metadata: {0}")]
    Consistency(String),

    #[error("no data: {0}")]
    EmptyData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, QcsError>;

impl QcsError {
    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        QcsError::Dimension {
            context,
            expected,
            got,
        }
    }

    pub(crate) fn at_stage(self, stage: usize) -> Self {
        match self {
            QcsError::DegenerateScale { measurement, .. } => QcsError::DegenerateScale {
                measurement,
                stage: Some(stage),
            },
            other => other,
        }
    }
}
