//! Target classifier and text generator, their training loops, and the
//! hidden-state types the attacks perturb.

pub mod checkpoint;
pub mod classifier;
pub mod config;
pub mod generator;
pub mod state;
pub mod transformer;

pub use classifier::{argmax, train_classifier, train_classifier_until, ClassifierModel};
pub use config::{ArchConfig, TrainConfig};
pub use generator::{select_token, train_generator, Decoding, GeneratorModel};
pub use state::{HiddenState, Perturbation};
