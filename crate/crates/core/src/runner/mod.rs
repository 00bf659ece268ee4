//! Experiment orchestration: configuration, the end-to-end pipeline,
//! persistence, comparison tables and plots.

pub mod config;
pub mod pipeline;
pub mod plot;
pub mod table;

pub use config::{DatasetSource, EvalSpec, ExperimentConfig, GeneratorCorpus, ModelSize, TemplateSpec, TrainSpec};
pub use pipeline::{pipeline_run, prepare, Models, Prepared, RunDir, RunOutput};
pub use table::{ablation_template_length, compare_table, AblationRow, Table};
