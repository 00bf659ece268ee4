//! Differentiable path from a generator hidden state to the classifier loss.
//!
//! Text is discrete, so the classifier scores the tokens generated so far
//! followed by `lookahead` expected embeddings: at each lookahead step the
//! generator's next-token distribution `q` is turned into `q · E` over the
//! classifier's embedding table (and `q · E_gen` is fed back into the
//! generator for the following step).
//!
//! The expected embedding can land where no real token lies, and the
//! classifier may score such mixtures confidently. [`BridgeKind::ExpectedLoss`]
//! instead scores the text extended by each of the generator's `k` most
//! likely next tokens and takes the expectation of those losses under the
//! next-token distribution renormalized over the candidates.

use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, EOS};
use crate::error::{Error, Result};
use crate::modeling::classifier::ClassifierVars;
use crate::modeling::generator::is_suppressed;
use crate::modeling::generator::GeneratorVars;
use crate::modeling::{ClassifierModel, GeneratorModel, HiddenState, Perturbation};
use crate::nn::{Mat, Tape, Var};

use super::loss::{attack_loss, loss_on_tape, LossKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BridgeKind {
    /// Classifier loss of the expected next-token embedding.
    #[serde(rename = "embedding")]
    ExpectedEmbedding,
    /// Expected classifier loss over the most likely next tokens.
    #[serde(rename = "loss")]
    ExpectedLoss,
}

/// Next-token candidates and the attack loss of the text extended by each.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidates {
    pub ids: Vec<TokenId>,
    pub losses: Vec<f32>,
}

/// Scores the `k` most probable admissible tokens of `dist` other than EOS
/// as continuations of `content`.
pub fn score_candidates(
    classifier: &ClassifierModel,
    content: &[TokenId],
    dist: &[f32],
    k: usize,
    target: usize,
    kind: LossKind,
) -> Result<Candidates> {
    let mut order: Vec<TokenId> = (0..dist.len())
        .filter(|&t| !is_suppressed(t) && t != EOS && dist[t].is_finite())
        .collect();
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]));
    order.truncate(k);
    if order.is_empty() {
        return Err(Error::Invalid("no next-token candidates".into()));
    }
    let seqs: Vec<Vec<TokenId>> = order
        .iter()
        .map(|&t| {
            let mut s = content.to_vec();
            s.push(t);
            s
        })
        .collect();
    let losses = classifier
        .predict_batch(&seqs)?
        .iter()
        .map(|p| {
            let p: Vec<f64> = p.iter().map(|&x| x as f64).collect();
            attack_loss(kind, &p, target) as f32
        })
        .collect();
    Ok(Candidates { ids: order, losses })
}

/// Everything a bridge evaluation needs besides the state.
#[derive(Clone, Copy, Debug)]
pub struct BridgeContext<'a> {
    /// Content tokens so far (template plus generated, no BOS); the last one
    /// is the token the generator consumes next.
    pub content: &'a [TokenId],
    /// Token fed to the generator after the state (usually `content`'s last).
    pub last: TokenId,
    pub target: usize,
    pub loss: LossKind,
    pub lookahead: usize,
    /// Weight of `KL(perturbed next-token distribution || reference)`.
    pub kl_coeff: f32,
    /// Unperturbed next-token distribution; required when `kl_coeff > 0`.
    pub reference: Option<&'a [f32]>,
    /// Scored candidates; when present the expected-loss bridge is used
    /// (lookahead must be 1).
    pub candidates: Option<&'a Candidates>,
}

pub struct Bridged {
    /// Classifier input: hard rows for `content` then the soft rows.
    pub embeddings: Var,
    /// Generator distribution for the first lookahead step (`1 x |V|`).
    pub first_dist: Var,
}

/// Builds the bridge on `tape` from per-layer state vars `past`.
#[allow(clippy::too_many_arguments)]
pub fn soft_forward_bridge(
    tape: &mut Tape<'_>,
    generator: &GeneratorModel,
    gvars: &GeneratorVars,
    classifier: &ClassifierModel,
    cvars: &ClassifierVars,
    past: &[Var],
    ctx: &BridgeContext<'_>,
) -> Result<Bridged> {
    if ctx.lookahead == 0 {
        return Err(Error::Invalid("lookahead must be at least 1".into()));
    }
    let mut past: Vec<Var> = past.to_vec();
    let has_past = tape.value(past[0]).rows() > 0;
    let mut input = tape.gather(gvars.token_embeddings(), &[ctx.last]);
    let mut soft_rows = Vec::with_capacity(ctx.lookahead);
    let mut first_dist = None;
    for step in 0..ctx.lookahead {
        let use_past = has_past || step > 0;
        let out = generator.forward_on_tape(tape, gvars, input, use_past.then_some(&past[..]))?;
        let q = tape.softmax_rows(out.logits, None);
        first_dist.get_or_insert(q);
        soft_rows.push(tape.matmul(q, cvars.token_embeddings()));
        if step + 1 < ctx.lookahead {
            past = past
                .iter()
                .zip(&out.new_kv)
                .map(|(&p, &n)| if use_past { tape.concat_rows(&[p, n]) } else { n })
                .collect();
            input = tape.matmul(q, gvars.token_embeddings());
        }
    }
    let room = classifier.arch.max_positions.saturating_sub(ctx.lookahead);
    let hard = &ctx.content[..ctx.content.len().min(room)];
    let mut parts = Vec::with_capacity(1 + soft_rows.len());
    if !hard.is_empty() {
        parts.push(classifier.embed_on_tape(tape, cvars, hard));
    }
    parts.extend(soft_rows);
    let embeddings = if parts.len() == 1 {
        parts[0]
    } else {
        tape.concat_rows(&parts)
    };
    Ok(Bridged {
        embeddings,
        first_dist: first_dist.expect("lookahead >= 1"),
    })
}

/// Attack loss for the state `state + pad(delta)`, where `delta` holds the
/// last `delta[l].rows()` positions of each layer, and its gradient with
/// respect to `delta`.
pub struct WindowEval {
    pub loss: f32,
    pub grad: Vec<Mat>,
}

pub fn eval_window(
    generator: &GeneratorModel,
    classifier: &ClassifierModel,
    state: &HiddenState,
    delta: &[Mat],
    ctx: &BridgeContext<'_>,
    want_grad: bool,
) -> Result<WindowEval> {
    if delta.len() != state.num_layers() {
        return Err(Error::Shape("one window matrix per layer expected".into()));
    }
    let t = state.len();
    let mut tape = Tape::new();
    let gvars = generator.bind(&mut tape, false);
    let cvars = classifier.bind(&mut tape, false);
    let mut delta_vars = Vec::with_capacity(delta.len());
    let mut past = Vec::with_capacity(delta.len());
    for (h, d) in state.layers().iter().zip(delta) {
        let w = d.rows();
        if w > t || d.cols() != h.cols() {
            return Err(Error::Shape(format!(
                "window {:?} does not fit state {:?}",
                d.shape(),
                h.shape()
            )));
        }
        let hv = tape.borrowed(h, false);
        let dv = tape.leaf(d.clone(), want_grad);
        delta_vars.push(dv);
        let p = if w == 0 {
            hv
        } else {
            let tail = tape.slice_rows(hv, t - w, w);
            let tail = tape.add(tail, dv);
            if w == t {
                tail
            } else {
                let head = tape.slice_rows(hv, 0, t - w);
                tape.concat_rows(&[head, tail])
            }
        };
        past.push(p);
    }
    let (mut loss, first_dist) = match ctx.candidates {
        Some(c) => expected_loss(&mut tape, generator, &gvars, &past, ctx, c)?,
        None => {
            let bridged = soft_forward_bridge(&mut tape, generator, &gvars, classifier, &cvars, &past, ctx)?;
            let probs = classifier.probs_on_tape(&mut tape, &cvars, bridged.embeddings);
            (loss_on_tape(&mut tape, probs, ctx.target, ctx.loss), bridged.first_dist)
        }
    };
    if ctx.kl_coeff > 0.0 {
        let reference = ctx
            .reference
            .ok_or_else(|| Error::Invalid("KL term needs the unperturbed distribution".into()))?;
        let q = first_dist;
        let ln_q = tape.ln_clamped(q, 1e-12);
        let ln_ref = tape.constant(Mat::row_vector(reference.iter().map(|&r| r.max(1e-12).ln()).collect()));
        let diff = tape.sub(ln_q, ln_ref);
        let terms = tape.mul(q, diff);
        let kl = tape.sum_all(terms);
        let kl = tape.affine(kl, ctx.kl_coeff, 0.0);
        loss = tape.add(loss, kl);
    }
    let value = tape.scalar(loss);
    let grad = if want_grad {
        let mut g = tape.backward(loss);
        delta_vars
            .iter()
            .zip(delta)
            .map(|(&v, d)| g.take(v).unwrap_or_else(|| Mat::zeros(d.rows(), d.cols())))
            .collect()
    } else {
        Vec::new()
    };
    Ok(WindowEval { loss: value, grad })
}

/// Expected candidate loss and the full next-token distribution.
fn expected_loss(
    tape: &mut Tape<'_>,
    generator: &GeneratorModel,
    gvars: &GeneratorVars,
    past: &[Var],
    ctx: &BridgeContext<'_>,
    cands: &Candidates,
) -> Result<(Var, Var)> {
    if ctx.lookahead != 1 {
        return Err(Error::Invalid("the expected-loss bridge needs lookahead 1".into()));
    }
    if cands.ids.is_empty() || cands.ids.len() != cands.losses.len() {
        return Err(Error::Shape("candidate ids and losses differ in length".into()));
    }
    let has_past = tape.value(past[0]).rows() > 0;
    let input = tape.gather(gvars.token_embeddings(), &[ctx.last]);
    let out = generator.forward_on_tape(tape, gvars, input, has_past.then_some(past))?;
    let v = tape.value(out.logits).cols();
    let mut select = Mat::zeros(v, cands.ids.len());
    for (j, &id) in cands.ids.iter().enumerate() {
        if id >= v {
            return Err(Error::Vocab { id, size: v });
        }
        select.set(id, j, 1.0);
    }
    let select = tape.constant(select);
    let picked = tape.matmul(out.logits, select);
    let q = tape.softmax_rows(picked, None);
    let losses = tape.constant(Mat::row_vector(cands.losses.clone()));
    let weighted = tape.mul(q, losses);
    let loss = tape.sum_all(weighted);
    let dist = tape.softmax_rows(out.logits, None);
    Ok((loss, dist))
}

/// Gradient of the attack loss with respect to the last `window` positions
/// of every layer of `state`; earlier positions carry zeros.
pub fn grad_wrt_state(
    generator: &GeneratorModel,
    classifier: &ClassifierModel,
    state: &HiddenState,
    window: usize,
    ctx: &BridgeContext<'_>,
) -> Result<(f32, Perturbation)> {
    if window == 0 {
        return Err(Error::Invalid("window must be at least 1".into()));
    }
    let w = window.min(state.len());
    let zeros = vec![Mat::zeros(w, state.width()); state.num_layers()];
    let ev = eval_window(generator, classifier, state, &zeros, ctx, true)?;
    if !ev.loss.is_finite() || ev.grad.iter().any(|g| !g.all_finite()) {
        return Err(Error::Numerical {
            step: 0,
            what: "non-finite loss or gradient".into(),
        });
    }
    Ok((ev.loss, Perturbation::from_window(state, &ev.grad)?))
}
