use std::path::PathBuf;

/// Errors raised anywhere in the segmentation toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("band {0} not found")]
    MissingBand(u8),

    #[error("shape mismatch for {what}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        what: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("band {subtrahend} ({subtrahend_um} um) must have a shorter wavelength than band {minuend} ({minuend_um} um)")]
    WavelengthOrder {
        subtrahend: u8,
        subtrahend_um: f64,
        minuend: u8,
        minuend_um: f64,
    },

    #[error("image has no valid pixels")]
    NoValidPixels,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown encoder variant {0:?} (expected one of resnet18, resnet34)")]
    UnknownEncoder(String),

    #[error("unknown loss {0:?} (expected one of dice, logdice, focal, sr)")]
    UnknownLoss(String),

    #[error("input spatial size {height}x{width} is not divisible by {divisor}")]
    IndivisibleInput {
        height: usize,
        width: usize,
        divisor: usize,
    },

    #[error("weight mismatch at {name}: {detail}")]
    WeightMismatch { name: String, detail: String },

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("malformed {what} at line {line}: {detail}")]
    Malformed {
        what: String,
        line: usize,
        detail: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("loss became non-finite at step {step}; last good checkpoint: {}", last_checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into()))]
    Diverged {
        step: u64,
        last_checkpoint: Option<PathBuf>,
    },

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Candle(#[from] candle_core::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn shape(what: impl Into<String>, expected: &[usize], found: &[usize]) -> Self {
        Error::ShapeMismatch {
            what: what.into(),
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::UnknownEncoder(_)
            | Error::UnknownLoss(_)
            | Error::InvalidArgument(_)
            | Error::IncompatibleCheckpoint(_)
            | Error::WeightMismatch { .. } => 2,
            Error::Diverged { .. } => 4,
            _ => 3,
        }
    }
}
