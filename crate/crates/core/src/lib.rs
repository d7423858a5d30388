//! Neural compress-and-forward relaying for the Gaussian primitive relay
//! channel with finite-order modulation.

pub mod artifact;
pub mod channel;
pub mod config;
pub mod diffnet;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod parallel;
pub mod relaxation;
pub mod rng;
pub mod selftest;
pub mod stats;
pub mod training;

pub use error::{Error, Result};
