//! Minimal dense-matrix autodiff used by the desk-scale transformers.

pub mod mat;
pub mod optim;
pub mod tape;

pub use mat::Mat;
pub use optim::AdamW;
pub use tape::{Gradients, Tape, Var};
