//! Direct optimization of free input embeddings against the classifier,
//! decoded to the nearest vocabulary rows.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{Template, TokenId};
use crate::error::{Error, Result};
use crate::modeling::ClassifierModel;
use crate::nn::{Mat, Tape};

use super::loss::loss_on_tape;
use super::{check_finite, AttackConfig, InvertedText, LossKind, Method};

/// Per-column standard deviation of `m`.
pub fn column_std(m: &Mat) -> Vec<f32> {
    let n = m.rows() as f64;
    (0..m.cols())
        .map(|c| {
            let mean = (0..m.rows()).map(|r| m.get(r, c) as f64).sum::<f64>() / n;
            let var = (0..m.rows()).map(|r| (m.get(r, c) as f64 - mean).powi(2)).sum::<f64>() / n;
            var.sqrt() as f32
        })
        .collect()
}

/// Nearest embedding row to each row of `x` by Euclidean distance, ties to
/// the smallest id. Special tokens are never chosen.
pub fn nearest_tokens(x: &Mat, table: &Mat) -> Vec<TokenId> {
    let first = crate::corpus::vocab::SPECIAL_TOKENS
        .len()
        .min(table.rows().saturating_sub(1));
    (0..x.rows())
        .map(|r| {
            let row = x.row(r);
            let mut best = (first, f64::INFINITY);
            for id in first..table.rows() {
                let d: f64 = row
                    .iter()
                    .zip(table.row(id))
                    .map(|(a, b)| ((a - b) as f64).powi(2))
                    .sum();
                if d < best.1 {
                    best = (id, d);
                }
            }
            best.0
        })
        .collect()
}

fn loss_and_grad(classifier: &ClassifierModel, x: &Mat, target: usize, kind: LossKind) -> (f32, Mat) {
    let mut tape = Tape::new();
    let vars = classifier.bind(&mut tape, false);
    let xv = tape.leaf(x.clone(), true);
    let p = classifier.probs_on_tape(&mut tape, &vars, xv);
    let l = loss_on_tape(&mut tape, p, target, kind);
    let g = tape
        .backward(l)
        .take(xv)
        .unwrap_or_else(|| Mat::zeros(x.rows(), x.cols()));
    (tape.scalar(l), g)
}

/// `length` tokens optimized for `cfg.vmi_epochs` normalized gradient steps
/// with backtracking; `loss_trace` has one entry for the start and one per
/// epoch and never increases.
pub fn vmi_attack(classifier: &ClassifierModel, length: usize, cfg: &AttackConfig) -> Result<InvertedText> {
    cfg.validate()?;
    if length == 0 || length > classifier.arch.max_positions {
        return Err(Error::Invalid(format!("VMI length {length} out of range")));
    }
    if cfg.target_label >= classifier.num_classes {
        return Err(Error::Invalid(format!(
            "target label {} out of range",
            cfg.target_label
        )));
    }
    let table = classifier.embedding_table();
    let std = column_std(table);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = Mat::zeros(length, table.cols());
    for (c, &s) in std.iter().enumerate() {
        let normal = Normal::new(0.0f32, s.max(1e-6)).expect("finite std");
        for r in 0..length {
            x.set(r, c, normal.sample(&mut rng));
        }
    }

    let (mut loss, mut grad) = loss_and_grad(classifier, &x, cfg.target_label, cfg.loss_kind);
    let mut trace = vec![loss as f64];
    for epoch in 0..cfg.vmi_epochs {
        if !loss.is_finite() || !grad.all_finite() {
            return Err(Error::Numerical {
                step: epoch,
                what: "non-finite VMI loss or gradient".into(),
            });
        }
        let mut dir = grad.clone();
        dir.scale(1.0 / (grad.frobenius_norm() + 1e-8));
        let mut alpha = cfg.vmi_step_size;
        for _ in 0..=cfg.max_halvings {
            let mut cand = x.clone();
            cand.axpy(-alpha, &dir);
            let (l, g) = loss_and_grad(classifier, &cand, cfg.target_label, cfg.loss_kind);
            if l.is_finite() && l <= loss {
                x = cand;
                loss = l;
                grad = g;
                break;
            }
            alpha *= 0.5;
        }
        trace.push(loss as f64);
    }
    check_finite(&trace, 0)?;
    let tokens = nearest_tokens(&x, table);
    Ok(InvertedText {
        template: Template::new(tokens.clone(), 0),
        tokens,
        target_label: cfg.target_label,
        loss_trace: trace,
        pre_loss_trace: Vec::new(),
        method: Method::Vmi,
    })
}
