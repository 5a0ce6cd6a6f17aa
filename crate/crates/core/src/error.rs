//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {msg}")]
    MalformedLine { line: usize, msg: String },

    #[error("duplicate passage id '{0}'")]
    DuplicateId(String),

    #[error("duplicate pair ({xx_id}, {en_id})")]
    DuplicatePair { xx_id: String, en_id: String },

    #[error("pair references unknown {side} id '{id}'")]
    DanglingPairId { side: &'static str, id: String },

    #[error("pair file of kind {kind} requires an English corpus for id validation")]
    MissingEnCorpus { kind: &'static str },

    #[error("pair record has unexpected field '{field}' for kind {kind}")]
    UnexpectedPairField { kind: &'static str, field: &'static str },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("cannot featurize empty text")]
    EmptyText,

    #[error("vector dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("nll loss requires at least one negative passage")]
    NoNegatives,

    #[error("training requires at least one pair")]
    NoTrainingPairs,

    #[error("negative pool ({pool}) must exceed negatives per positive ({requested})")]
    NegativePoolTooSmall { pool: usize, requested: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {loss}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("cannot build an index over an empty corpus")]
    EmptyCorpus,

    #[error("passage '{0}' has no keyphrases, required by the index target mode")]
    MissingKeyphrases(String),

    #[error("model dimension {model} does not match index dimension {index}")]
    ModelIndexMismatch { model: usize, index: usize },

    #[error("search requires k >= 1")]
    InvalidK,

    #[error("recall evaluation requires a non-empty pair set")]
    EmptyEvalSet,

    #[error("aggregation requires at least one example score")]
    EmptyScores,

    #[error("target sequence does not start with a language token: '{0}'")]
    MissingLangToken(String),

    #[error("cannot assemble a target from an empty keyphrase list (id '{0}')")]
    EmptyTarget(String),

    #[error("keyphrase '{phrase}' contains control token '{token}'")]
    ControlTokenInPhrase { phrase: String, token: String },

    #[error("prediction record references unknown id '{0}'")]
    UnknownPredictionId(String),

    #[error("pseudo label accuracy: no overlap between pseudo and gold xx ids")]
    NoGoldOverlap,

    #[error("bad model file {path}: {msg}")]
    BadModelFile { path: String, msg: String },

    #[error("bad index file {path}: {msg}")]
    BadIndexFile { path: String, msg: String },

    #[error("bad embeddings file {path}: {msg}")]
    BadEmbeddingsFile { path: String, msg: String },

    #[error("pair set has kind {found}, expected {expected}")]
    WrongPairKind { expected: &'static str, found: &'static str },

    #[error("awaiting external predictions at {path}")]
    AwaitingPredictions { path: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
