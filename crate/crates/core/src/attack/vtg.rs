//! Plain template-conditioned generation, targeting the label the template
//! co-occurs with most in the labeled public data.

use crate::corpus::{infer_template_label, LabelAccess, SealedLabels, Template, Vocab};
use crate::error::Result;
use crate::modeling::{ClassifierModel, GeneratorModel};

use super::{check_finite, text_loss, AttackConfig, InvertedText, Method};

pub fn vtg_generate(
    generator: &GeneratorModel,
    classifier: &ClassifierModel,
    template: &Template,
    labeled_public: &SealedLabels,
    vocab: &Vocab,
    cfg: &AttackConfig,
) -> Result<InvertedText> {
    cfg.validate()?;
    let labeled = labeled_public.unseal(LabelAccess::VanillaGeneration);
    let target_label = infer_template_label(template, labeled, vocab)?;
    let tokens = generator.generate(&template.tokens, cfg.max_len, cfg.decoding, cfg.seed)?;
    let trace = vec![text_loss(classifier, &tokens, target_label, cfg.loss_kind)?];
    check_finite(&trace, 0)?;
    Ok(InvertedText {
        tokens,
        template: template.clone(),
        target_label,
        loss_trace: trace,
        pre_loss_trace: Vec::new(),
        method: Method::Vtg,
    })
}
