use std::path::PathBuf;

use thiserror::Error;

use crate::env::Action;

/// Every failure the toolkit can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cell ({row}, {col}) is outside the {rows}x{cols} grid")]
    CellOutOfGrid {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("action {action:?} leaves the grid from ({row}, {col})")]
    InvalidAction { action: Action, row: usize, col: usize },
    #[error("episode already finished")]
    EpisodeDone,
    #[error("no start/goal pair at distance {distance} on a {rows}x{cols} grid")]
    InfeasibleDistance {
        distance: usize,
        rows: usize,
        cols: usize,
    },
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("every entry of the distribution is masked")]
    AllMasked,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("decode error at byte {offset}: {msg}")]
    Decode { offset: usize, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn decode(offset: usize, msg: impl Into<String>) -> Self {
        Error::Decode {
            offset,
            msg: msg.into(),
        }
    }
}
