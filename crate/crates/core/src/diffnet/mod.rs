//! Minimal differentiable computation: dense networks, stable softmax,
//! reverse-mode gradients and an Adam optimizer.

pub mod functions;
pub mod matrix;
pub mod network;
pub mod optim;
pub mod tape;

pub use functions::{log_softmax, log_sum_exp, softmax};
pub use matrix::{argmax, matmul, Matrix};
pub use network::{Dense, Network, HIDDEN_UNITS, LEAKY_SLOPE};
pub use optim::{Adam, AdamConfig};
pub use tape::{Gradients, Tape, Var};
