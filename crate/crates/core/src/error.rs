use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("path does not exist: {}", .0.display())]
    MissingPath(PathBuf),
    #[error("no glyphs found under {}", .0.display())]
    NoGlyphs(PathBuf),
    #[error("glyph bank has no samples for digit {0}")]
    MissingDigit(u8),
    #[error("invalid year label {0:?}: expected a year in 1890..=1920")]
    InvalidLabel(String),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("corpus does not match manifest:\n{0}")]
    ManifestMismatch(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("image {}: {message}", path.display())]
    Image { path: PathBuf, message: String },
    #[error("preprocessing failed: {0}")]
    Preprocess(String),
    #[error("bundle schema version {found} is not supported (this build reads version {expected})")]
    Schema { found: u32, expected: u32 },
    #[error("bundle: {0}")]
    Bundle(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("sample {sample} cannot be aligned by CTC: {source}")]
    CtcInfeasible {
        sample: String,
        #[source]
        source: hdsr_nn::NnError,
    },
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged {
        epoch: usize,
        record: Box<crate::training::TrainRunRecord>,
    },
    #[error("metrics: {0}")]
    Metric(String),
    #[error(transparent)]
    Nn(#[from] hdsr_nn::NnError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True when the failure stems from bad input (paths, files, labels,
    /// configuration) rather than from a fault in the pipeline itself.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::MissingPath(_)
                | Error::NoGlyphs(_)
                | Error::MissingDigit(_)
                | Error::InvalidLabel(_)
                | Error::InvalidSample(_)
                | Error::ManifestMismatch(_)
                | Error::InvalidManifest(_)
                | Error::Image { .. }
                | Error::Schema { .. }
                | Error::Bundle(_)
                | Error::Config(_)
                | Error::EmptyCorpus
                | Error::CtcInfeasible { .. }
        )
    }
}
