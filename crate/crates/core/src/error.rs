use thiserror::Error;

use crate::model::ObjectId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid hyperparameters: {0}")]
    Hyperparameters(String),

    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    #[error("numerical underflow: {0}")]
    Underflow(String),

    #[error("answer references unknown user `{0}`")]
    Vocabulary(String),

    #[error("no observations to process")]
    EmptyState,

    #[error("object {0} is not part of the scenario")]
    UnknownObject(ObjectId),

    #[error("object {0} has already been answered")]
    AlreadyAnswered(ObjectId),

    #[error("no candidates left to query")]
    NoCandidates,

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("dialogue backend error: {message}")]
    Backend { message: String, raw: Option<String> },

    #[error("could not parse backend output: {message}")]
    Parse { message: String, raw: String },

    #[error("question generation produced no text")]
    Generation,

    #[error("could not interpret answer `{raw}`: {reason}")]
    Interpretation { raw: String, reason: String },

    #[error("operation not supported by the {backend} backend: {what}")]
    Unsupported {
        backend: &'static str,
        what: &'static str,
    },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
