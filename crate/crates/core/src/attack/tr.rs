//! Generation with a perturbed key/value cache.
//!
//! Before each token the last `window_mask` cached positions are nudged by
//! normalized gradient steps that lower the classifier loss of the text so
//! far plus the expected next token. Perturbations accumulate in the cache.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Template, BOS, EOS};
use crate::error::{Error, Result};
use crate::modeling::{select_token, ClassifierModel, GeneratorModel, HiddenState, Perturbation};
use crate::nn::Mat;

use super::bridge::{eval_window, score_candidates, BridgeContext, BridgeKind};
use super::{check_finite, text_loss, AttackConfig, InvertedText, Method};

fn numerical(step: usize, what: &str) -> Error {
    Error::Numerical {
        step,
        what: what.into(),
    }
}

/// Descends the loss over a window perturbation of `state`. Returns the
/// perturbation, the loss before it and the loss after it. A candidate step
/// is accepted only if it does not raise the loss, so `post <= pre`.
fn perturb(
    generator: &GeneratorModel,
    classifier: &ClassifierModel,
    state: &HiddenState,
    ctx: &BridgeContext<'_>,
    cfg: &AttackConfig,
    step: usize,
) -> Result<(Vec<Mat>, f64, f64)> {
    let w = cfg.window_mask.min(state.len());
    let mut delta = vec![Mat::zeros(w, state.width()); state.num_layers()];
    let optimize = cfg.step_size > 0.0 && cfg.grad_steps_per_token > 0 && w > 0;
    let mut ev = eval_window(generator, classifier, state, &delta, ctx, optimize)?;
    if !ev.loss.is_finite() {
        return Err(numerical(step, "non-finite loss"));
    }
    let pre = ev.loss as f64;
    // with scored candidates no perturbation can go below the best one
    let floor = ctx
        .candidates
        .map(|c| c.losses.iter().copied().fold(f32::INFINITY, f32::min))
        .unwrap_or(0.0);
    if !optimize || ev.loss - floor <= cfg.loss_tolerance {
        return Ok((delta, pre, pre));
    }
    'descent: for _ in 0..cfg.grad_steps_per_token {
        if ev.grad.iter().any(|g| !g.all_finite()) {
            return Err(numerical(step, "non-finite gradient"));
        }
        let direction: Vec<Mat> = ev
            .grad
            .iter()
            .map(|g| {
                let mut d = g.clone();
                d.scale(1.0 / (g.frobenius_norm() + 1e-8));
                d
            })
            .collect();
        let mut alpha = cfg.step_size;
        for _ in 0..=cfg.max_halvings {
            let cand: Vec<Mat> = delta
                .iter()
                .zip(&direction)
                .map(|(d, g)| {
                    let mut c = d.clone();
                    c.axpy(-alpha, g);
                    c
                })
                .collect();
            let cand_ev = eval_window(generator, classifier, state, &cand, ctx, true)?;
            if cand_ev.loss.is_finite() && cand_ev.loss <= ev.loss {
                delta = cand;
                ev = cand_ev;
                if ev.loss - floor <= cfg.loss_tolerance {
                    break 'descent;
                }
                continue 'descent;
            }
            alpha *= 0.5;
        }
        // no admissible step: keep the current perturbation
        break;
    }
    Ok((delta, pre, ev.loss as f64))
}

/// Inverts one text from `template` toward `cfg.target_label`.
pub fn tr_attack(
    generator: &GeneratorModel,
    classifier: &ClassifierModel,
    template: &Template,
    cfg: &AttackConfig,
) -> Result<InvertedText> {
    cfg.validate()?;
    if cfg.target_label >= classifier.num_classes {
        return Err(Error::Invalid(format!(
            "target label {} out of range",
            cfg.target_label
        )));
    }
    if generator.vocab_hash != classifier.vocab_hash {
        return Err(Error::VocabMismatch {
            found: generator.vocab_hash.clone(),
            expected: classifier.vocab_hash.clone(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let max_len = cfg.max_len.min(generator.max_content_len());
    let mut content = template.tokens.clone();
    let mut context = vec![BOS];
    context.extend_from_slice(&content);
    let mut state = generator.prime(&context[..context.len() - 1])?;
    let mut last = *context.last().expect("BOS present");
    let mut trace = Vec::new();
    let mut pre_trace = Vec::new();

    while content.len() < max_len {
        let step = trace.len();
        let reference = if cfg.kl_coeff > 0.0 || cfg.bridge == BridgeKind::ExpectedLoss {
            Some(generator.step(last, &state)?.0)
        } else {
            None
        };
        let candidates = match (&reference, cfg.bridge) {
            (Some(dist), BridgeKind::ExpectedLoss) => Some(score_candidates(
                classifier,
                &content,
                dist,
                cfg.bridge_candidates,
                cfg.target_label,
                cfg.loss_kind,
            )?),
            _ => None,
        };
        let ctx = BridgeContext {
            content: &content,
            last,
            target: cfg.target_label,
            loss: cfg.loss_kind,
            lookahead: cfg.lookahead,
            kl_coeff: cfg.kl_coeff,
            reference: reference.as_deref(),
            candidates: candidates.as_ref(),
        };
        let (delta, pre, post) = perturb(generator, classifier, &state, &ctx, cfg, step)?;
        pre_trace.push(pre);
        trace.push(post);
        if delta.iter().any(|d| d.data().iter().any(|&v| v != 0.0)) {
            state = state.add(&Perturbation::from_window(&state, &delta)?)?;
        }
        let (dist, next_state) = generator.step(last, &state)?;
        let tok = select_token(&dist, cfg.decoding, &mut rng).map_err(|_| numerical(step, "no admissible token"))?;
        if tok == EOS {
            break;
        }
        content.push(tok);
        state = next_state;
        last = tok;
    }
    if trace.is_empty() {
        trace.push(text_loss(classifier, &content, cfg.target_label, cfg.loss_kind)?);
    }
    check_finite(&trace, 0)?;
    Ok(InvertedText {
        tokens: content,
        template: template.clone(),
        target_label: cfg.target_label,
        loss_trace: trace,
        pre_loss_trace: pre_trace,
        method: Method::Tr,
    })
}
