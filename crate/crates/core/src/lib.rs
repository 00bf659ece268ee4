//! Reconstructing private training text from a fine-tuned transformer
//! classifier by perturbing a text generator's hidden state.

pub mod artifact;
pub mod attack;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod modeling;
pub mod nn;
pub mod runner;
pub mod synth;

pub use error::{Error, Result};
