//! Dense f64 tensors, a small reverse-mode tape, Adam, and checkpoint files.
//!
//! Everything on the tape is a row-major matrix. Vectors are `1 x n` rows and
//! batches stack rows. Linear layers store `W` as `out x in` and compute
//! `Y = X W^T + b`.

mod checkpoint;
mod layers;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use layers::{
    forward_gru, forward_linear, gru_on_tape, init_gru, init_linear, init_message_layer,
    linear_on_tape, message_on_tape, Activation,
};
pub use optim::{Adam, AdamConfig};
pub use params::{GradRecord, Params};
pub use tape::{Adjacency, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    ShapeMismatch { op: &'static str, expected: Vec<usize>, got: Vec<usize> },
    #[error("no forward pass recorded for this variable")]
    NoForwardRecorded,
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}

pub(crate) fn mismatch(op: &'static str, expected: &[usize], got: &[usize]) -> NeuralError {
    NeuralError::ShapeMismatch { op, expected: expected.to_vec(), got: got.to_vec() }
}

#[cfg(test)]
mod tests;
