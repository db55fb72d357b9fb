//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by data ingestion, model construction and fitting.
#[derive(Debug, Error)]
pub enum EmberError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("duplicate pixel-day key (cell_id={cell_id}, day_index={day_index})")]
    DuplicateKey { cell_id: u64, day_index: u32 },

    #[error("field `{field}` out of range: {message}")]
    FieldRange { field: &'static str, message: String },

    #[error("event {fire_id} references missing pixel-day (cell_id={cell_id}, day_index={day_index})")]
    OrphanEvent {
        fire_id: u64,
        cell_id: u64,
        day_index: u32,
    },

    #[error("pixel-day (cell_id={cell_id}, day_index={day_index}) declares count {expected} but has {actual} events attached")]
    CountMismatch {
        cell_id: u64,
        day_index: u32,
        expected: u32,
        actual: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("did not converge: {0}")]
    NonConvergence(String),

    #[error("model specification error: {0}")]
    Model(String),

    #[error("observation outside likelihood support: {0}")]
    Support(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<EmberError>,
    },
}

impl EmberError {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        EmberError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, EmberError>;
