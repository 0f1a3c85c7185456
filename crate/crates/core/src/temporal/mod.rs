//! Recurrent activity head: batch-normalized LSTM, action/confidence heads,
//! track association, the multi-activity loss and a toy trainer.

pub mod bnlstm;
pub mod loss;
pub mod model;
pub mod track;
pub mod train;
pub mod vocab;

use thiserror::Error;

pub use bnlstm::{BnLstmCell, Mode};
pub use model::{ActivityModel, Prediction};
pub use track::{associate, Association, Track, TrackStore};
pub use vocab::ActionVocabulary;

#[derive(Debug, Error, PartialEq)]
pub enum TemporalError {
    #[error("train mode needs a batch of at least 2, got {0}")]
    TrainBatch(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite input features")]
    NonFinite,
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),
    #[error("invalid loss batch: {0}")]
    Loss(String),
    #[error("training failed: {0}")]
    Train(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss {loss} vs initial {initial}")]
    Diverged { epoch: usize, step: usize, loss: f64, initial: f64 },
    #[error("parameter file: {0}")]
    Params(String),
}

impl From<crate::tensor_file::TensorFileError> for TemporalError {
    fn from(e: crate::tensor_file::TensorFileError) -> Self {
        TemporalError::Params(e.to_string())
    }
}
