//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! then fills gradients for every node reachable from a scalar loss. Model
//! weights live in a [`ParamStore`] and are bound onto a tape with
//! [`Tape::param`], so gradients can be read back per parameter and fed to
//! [`AdamState::step`].

mod adam;
pub mod cases;
mod check;
mod checkpoint;
mod error;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use check::{grad_check, grad_check_params, relative_error, FD_STEP};
pub use checkpoint::{
    read_checkpoint, write_checkpoint, CheckpointHeader, Dtype, TensorHeader, CHECKPOINT_FORMAT,
};
pub use error::{CheckpointError, TapeError};
pub use params::{Grads, ParamEntry, ParamId, ParamStore};
pub use tape::{NormMode, Tape, Var, NORM_EPS};
pub use tensor::Tensor;
