use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("gradient check failed at {param}[{index}]: {detail}")]
    GradCheck {
        param: String,
        index: usize,
        detail: String,
    },

    #[error("clip too short: need {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("sample rate {got} Hz does not match analysis rate {expected} Hz")]
    SampleRate { expected: u32, got: u32 },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("bad data: {0}")]
    Data(String),

    #[error("alignment mismatch: expected {expected} frames, got {got}")]
    Alignment { expected: usize, got: usize },

    #[error("degenerate rotation: {0}")]
    Singular(String),

    #[error("invalid skeleton: {0}")]
    Structure(String),

    #[error("timestep {t} outside [1, {max}]")]
    Index { t: usize, max: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("embedding provider: {0}")]
    Provider(String),

    #[error("unpaired inputs: {}", .0.join(", "))]
    Pairing(Vec<String>),

    #[error("ingest failed:\n  {}", .0.join("\n  "))]
    Ingest(Vec<String>),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}

/// Reads a text file, naming the path in any I/O error.
pub(crate) fn read_text(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}
