//! Model checkpoints: stamped JSON holding the config, vocabulary hash and
//! parameter arrays.

use std::path::Path;

use crate::artifact::{read_json, write_json, Stamp};
use crate::corpus::Vocab;
use crate::error::{Error, Result};

use super::classifier::ClassifierModel;
use super::generator::GeneratorModel;

fn check_vocab(found: &str, vocab: &Vocab) -> Result<()> {
    let expected = vocab.hash();
    if found != expected {
        return Err(Error::VocabMismatch {
            found: found.to_string(),
            expected,
        });
    }
    Ok(())
}

pub fn save_classifier(path: &Path, model: &ClassifierModel, stamp: &Stamp) -> Result<()> {
    write_json(path, stamp, model)
}

pub fn load_classifier(path: &Path, vocab: &Vocab, stamp: &Stamp) -> Result<ClassifierModel> {
    let model: ClassifierModel = read_json(path, stamp)?;
    check_vocab(&model.vocab_hash, vocab)?;
    Ok(model)
}

pub fn save_generator(path: &Path, model: &GeneratorModel, stamp: &Stamp) -> Result<()> {
    write_json(path, stamp, model)
}

pub fn load_generator(path: &Path, vocab: &Vocab, stamp: &Stamp) -> Result<GeneratorModel> {
    let model: GeneratorModel = read_json(path, stamp)?;
    check_vocab(&model.vocab_hash, vocab)?;
    Ok(model)
}
