//! Reverse-mode differentiation engine, optimizer, and checkpointing.
//!
//! The tape is define-by-run and single-graph: each training step builds the
//! graph it needs, runs one backward pass, and drops it. No compilation, no
//! shared mutable state; a step owns its `ParameterStore` exclusively.

pub mod checkpoint;
pub mod gradcheck;
pub mod init;
pub mod store;
pub mod tape;
pub mod tensor;

pub use checkpoint::{Checkpoint, RngState};
pub use store::{lr_at, OptimizerConfig, ParameterStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
