//! Attack objectives over a class-probability vector.

use serde::{Deserialize, Serialize};

use crate::nn::{Mat, Tape, Var};

/// Floor applied to every probability inside a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "ce")]
    #[default]
    CrossEntropy,
    #[serde(rename = "mentr")]
    ModifiedEntropy,
}

impl LossKind {
    pub fn tag(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "ce",
            LossKind::ModifiedEntropy => "mentr",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ce" => Some(LossKind::CrossEntropy),
            "mentr" => Some(LossKind::ModifiedEntropy),
            _ => None,
        }
    }
}

fn ln_floor(x: f64) -> f64 {
    x.max(PROB_FLOOR).ln()
}

/// `-ln p_a`.
pub fn cross_entropy_loss(p: &[f64], a: usize) -> f64 {
    -ln_floor(p[a])
}

/// `-(1 - p_a) ln p_a - sum_{i != a} p_i ln(1 - p_i)`: falls as the target
/// gains confidence and rises with the confidence of any other class.
pub fn modified_entropy_loss(p: &[f64], a: usize) -> f64 {
    let mut loss = -(1.0 - p[a]) * ln_floor(p[a]);
    for (i, &pi) in p.iter().enumerate() {
        if i != a {
            loss -= pi * ln_floor(1.0 - pi);
        }
    }
    loss
}

pub fn attack_loss(kind: LossKind, p: &[f64], a: usize) -> f64 {
    match kind {
        LossKind::CrossEntropy => cross_entropy_loss(p, a),
        LossKind::ModifiedEntropy => modified_entropy_loss(p, a),
    }
}

/// The same losses recorded on a tape; `probs` is a `1 x N` row.
pub fn loss_on_tape(tape: &mut Tape<'_>, probs: Var, a: usize, kind: LossKind) -> Var {
    let eps = PROB_FLOOR as f32;
    let pa = tape.pick(probs, 0, a);
    let ln_pa = tape.ln_clamped(pa, eps);
    match kind {
        LossKind::CrossEntropy => tape.affine(ln_pa, -1.0, 0.0),
        LossKind::ModifiedEntropy => {
            let n = tape.value(probs).cols();
            let one_minus_pa = tape.affine(pa, -1.0, 1.0);
            let first = tape.mul(one_minus_pa, ln_pa);

            let one_minus_p = tape.affine(probs, -1.0, 1.0);
            let ln_rest = tape.ln_clamped(one_minus_p, eps);
            let mut mask = Mat::filled(1, n, 1.0);
            mask.set(0, a, 0.0);
            let mask = tape.constant(mask);
            let weighted = tape.mul(probs, ln_rest);
            let weighted = tape.mul(weighted, mask);
            let second = tape.sum_all(weighted);

            let total = tape.add(first, second);
            tape.affine(total, -1.0, 0.0)
        }
    }
}
