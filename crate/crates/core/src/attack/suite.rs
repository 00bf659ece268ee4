//! Runs one method over a template list and collects per-item failures.

use serde::{Deserialize, Serialize};

use crate::corpus::{SealedLabels, Template, Vocab};
use crate::error::{Error, Result};
use crate::modeling::{ClassifierModel, GeneratorModel};

use super::{gumbel_attack, tr_attack, vmi_attack, vtg_generate, AttackConfig, InvertedText, Method};

pub struct AttackModels<'a> {
    pub generator: &'a GeneratorModel,
    pub classifier: &'a ClassifierModel,
    /// Sealed labeled public copy; only VTG opens it.
    pub labeled_public: Option<&'a SealedLabels>,
    pub vocab: &'a Vocab,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub template_index: usize,
    pub label: Option<usize>,
    pub error: String,
    pub exit_code: i32,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuiteOutput {
    pub texts: Vec<InvertedText>,
    pub failures: Vec<ItemFailure>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent RNG seed for one suite item.
pub fn item_seed(master: u64, template_index: usize, label: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ template_index as u64) ^ label as u64)
}

/// TR and Gumbel run every (template, label) pair, VTG every template once
/// with its inferred label, VMI `templates.len()` restarts cycling through
/// the labels. Output order follows (template, label).
pub fn run_attack_suite(models: &AttackModels<'_>, templates: &[Template], cfg: &AttackConfig) -> Result<SuiteOutput> {
    cfg.validate()?;
    if templates.is_empty() {
        return Err(Error::Invalid("the attack suite needs at least one template".into()));
    }
    let n = models.classifier.num_classes;
    let mut items: Vec<(usize, Option<usize>)> = Vec::new();
    match cfg.method {
        Method::Tr | Method::Gumbel => {
            for t in 0..templates.len() {
                items.extend((0..n).map(|a| (t, Some(a))));
            }
        }
        Method::Vtg => items.extend((0..templates.len()).map(|t| (t, None))),
        Method::Vmi => items.extend((0..templates.len()).map(|r| (r, Some(r % n)))),
    }
    let labeled = match (cfg.method, models.labeled_public) {
        (Method::Vtg, None) => return Err(Error::Config("VTG needs the labeled public dataset".into())),
        (_, l) => l,
    };

    let mut out = SuiteOutput::default();
    for (t, label) in items {
        let mut item_cfg = cfg.clone();
        item_cfg.seed = item_seed(cfg.seed, t, label.unwrap_or(0));
        item_cfg.target_label = label.unwrap_or(0);
        let template = &templates[t];
        let result = match cfg.method {
            Method::Tr => tr_attack(models.generator, models.classifier, template, &item_cfg),
            Method::Gumbel => gumbel_attack(models.generator, models.classifier, template, &item_cfg),
            Method::Vtg => vtg_generate(
                models.generator,
                models.classifier,
                template,
                labeled.expect("checked above"),
                models.vocab,
                &item_cfg,
            ),
            Method::Vmi => vmi_attack(models.classifier, cfg.max_len, &item_cfg),
        };
        match result {
            Ok(text) => out.texts.push(text),
            Err(e) => out.failures.push(ItemFailure {
                template_index: t,
                label,
                error: e.to_string(),
                exit_code: e.exit_code(),
            }),
        }
    }
    Ok(out)
}
