use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown column layout for {dataset}: {detail}")]
    UnknownColumnLayout { dataset: String, detail: String },

    #[error("value out of range{}: {value} ({detail})", line_suffix(*.line))]
    ValueOutOfRange {
        line: Option<usize>,
        value: f64,
        detail: String,
    },

    #[error("duplicate triple ({concept}, {feature})")]
    DuplicateTriple { concept: String, feature: String },

    #[error("malformed line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("duplicate word {0:?}")]
    DuplicateWord(String),

    #[error("no embedding for concept {0:?}")]
    MissingEmbedding(String),

    #[error("no concept of the norm has an embedding")]
    EmptyIntersection,

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("k = {k} exceeds the maximum of {max}")]
    KTooLarge { k: usize, max: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("gold feature set is empty")]
    EmptyGold,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("target matrix is not categorical (density {density:.3})")]
    NotCategorical { density: f64 },

    #[error("norm carries no taxonomic feature annotations")]
    MissingTaxonomyMeta,

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("stage {stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid config field `{field}`: {reason}")]
    ConfigInvalid { field: String, reason: String },

    #[error("nothing to report")]
    EmptyReport,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn line_suffix(line: Option<usize>) -> String {
    line.map(|l| format!(" at line {l}")).unwrap_or_default()
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_fold(self, fold: usize) -> Self {
        Error::Fold {
            fold,
            source: Box::new(self),
        }
    }

    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// Stable machine-readable name of the innermost error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnknownColumnLayout { .. } => "UnknownColumnLayout",
            Error::ValueOutOfRange { .. } => "ValueOutOfRange",
            Error::DuplicateTriple { .. } => "DuplicateTriple",
            Error::MalformedLine { .. } => "MalformedLine",
            Error::MalformedHeader(_) => "MalformedHeader",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::DuplicateWord(_) => "DuplicateWord",
            Error::MissingEmbedding(_) => "MissingEmbedding",
            Error::EmptyIntersection => "EmptyIntersection",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::KTooLarge { .. } => "KTooLarge",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::EmptyGold => "EmptyGold",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::NotCategorical { .. } => "NotCategorical",
            Error::MissingTaxonomyMeta => "MissingTaxonomyMeta",
            Error::Fold { source, .. } | Error::Stage { source, .. } => source.kind(),
            Error::ConfigInvalid { .. } => "ConfigInvalid",
            Error::EmptyReport => "EmptyReport",
            Error::Io { .. } => "IoError",
            Error::Csv(_) => "CsvError",
            Error::Json(_) => "JsonError",
        }
    }
}
