//! Token-coefficient optimization through a Gumbel-softmax relaxation,
//! started from a generated sentence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel};

use crate::corpus::vocab::SPECIAL_TOKENS;
use crate::corpus::{Template, TokenId};
use crate::error::{Error, Result};
use crate::modeling::{ClassifierModel, GeneratorModel};
use crate::nn::{AdamW, Mat, Tape};

use super::loss::loss_on_tape;
use super::{check_finite, text_loss, AttackConfig, InvertedText, Method};

/// Row-wise `softmax((coeffs + noise) / tau)`.
pub fn gumbel_softmax(coeffs: &Mat, noise: &Mat, tau: f32) -> Mat {
    let mut tape = Tape::new();
    let c = tape.borrowed(coeffs, false);
    let g = tape.borrowed(noise, false);
    let z = tape.add(c, g);
    let z = tape.affine(z, 1.0 / tau, 0.0);
    let y = tape.softmax_rows(z, None);
    tape.value(y).clone()
}

/// Highest-coefficient non-special token per row, ties to the smallest id.
fn decode(coeffs: &Mat) -> Vec<TokenId> {
    let first = SPECIAL_TOKENS.len();
    (0..coeffs.rows())
        .map(|r| {
            let row = coeffs.row(r);
            (first..row.len()).fold(first, |best, id| if row[id] > row[best] { id } else { best })
        })
        .collect()
}

pub fn gumbel_attack(
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
    let initial = generator.generate(&template.tokens, cfg.max_len, cfg.decoding, cfg.seed)?;
    let vocab_size = classifier.vocab_size;
    if vocab_size <= SPECIAL_TOKENS.len() {
        return Err(Error::Invalid("vocabulary holds only special tokens".into()));
    }
    let mut coeffs = Mat::zeros(initial.len(), vocab_size);
    for (r, &t) in initial.iter().enumerate() {
        coeffs.set(r, t, cfg.gumbel_init_boost);
    }
    // a separate stream from the generation above
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6a09_e667_f3bc_c909);
    let gumbel = Gumbel::new(0.0f64, 1.0).expect("valid scale");
    // a uniform draw of exactly 0 or 1 maps to an infinite sample
    let draw = move |rng: &mut ChaCha8Rng| loop {
        let g = gumbel.sample(rng) as f32;
        if g.is_finite() {
            break g;
        }
    };
    let mut opt = AdamW::new(&[coeffs.shape()], cfg.gumbel_lr, 0.0);
    let mut trace = Vec::with_capacity(cfg.gumbel_epochs);

    for epoch in 0..cfg.gumbel_epochs {
        let noise = Mat::from_vec(
            coeffs.rows(),
            coeffs.cols(),
            (0..coeffs.rows() * coeffs.cols()).map(|_| draw(&mut rng)).collect(),
        );
        let (loss, grad) = {
            let mut tape = Tape::new();
            let vars = classifier.bind(&mut tape, false);
            let c = tape.borrowed(&coeffs, true);
            let g = tape.constant(noise);
            let z = tape.add(c, g);
            let z = tape.affine(z, 1.0 / cfg.gumbel_tau, 0.0);
            let y = tape.softmax_rows(z, None);
            let emb = tape.matmul(y, vars.token_embeddings());
            let p = classifier.probs_on_tape(&mut tape, &vars, emb);
            let l = loss_on_tape(&mut tape, p, cfg.target_label, cfg.loss_kind);
            let grad = tape
                .backward(l)
                .take(c)
                .unwrap_or_else(|| Mat::zeros(coeffs.rows(), coeffs.cols()));
            (tape.scalar(l), grad)
        };
        if !loss.is_finite() || !grad.all_finite() {
            return Err(Error::Numerical {
                step: epoch,
                what: "non-finite Gumbel loss or gradient".into(),
            });
        }
        trace.push(loss as f64);
        opt.step(&mut [&mut coeffs], &[grad], &[false]);
    }
    let tokens = if cfg.gumbel_epochs == 0 {
        initial
    } else {
        decode(&coeffs)
    };
    if trace.is_empty() {
        trace.push(text_loss(classifier, &tokens, cfg.target_label, cfg.loss_kind)?);
    }
    check_finite(&trace, 0)?;
    Ok(InvertedText {
        tokens,
        template: template.clone(),
        target_label: cfg.target_label,
        loss_trace: trace,
        pre_loss_trace: Vec::new(),
        method: Method::Gumbel,
    })
}
