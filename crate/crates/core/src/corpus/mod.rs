//! Dataset ingestion, splitting, template mining and token-distribution analyses.

pub mod dataset;
pub mod ranking;
pub mod split;
pub mod templates;
pub mod vocab;

pub use dataset::{load_dataset, Dataset, Example, LabelConfig};
pub use ranking::{content_tokens, kendall_topk, token_frequency_ranking};
pub use split::{split, LabelAccess, SealedLabels, SplitDataset};
pub use templates::{extract_templates, infer_template_label, permute_adjectives, truncate_template, Template};
pub use vocab::{tokenize, TokenId, Vocab, BOS, EOS, PAD, UNK};
