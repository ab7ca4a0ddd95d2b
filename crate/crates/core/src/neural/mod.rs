//! Bidirectional LSTM tagger with a softmax or CRF output layer, trained
//! with Adam and early stopping.

mod fit;
pub mod lstm;
mod tagger;

use thiserror::Error;

pub use fit::{clip_global_norm, fit, fit_with_validator, Adam, EarlyStopping, EpochRecord, FitConfig, History};
pub use tagger::{BiLstmTagger, Gradients, HeadKind, OutputHead};

use crate::container::ContainerError;
use crate::crf::chain::ChainError;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty sentence or batch")]
    EmptySentence,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("malformed model: {0}")]
    Format(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
}
