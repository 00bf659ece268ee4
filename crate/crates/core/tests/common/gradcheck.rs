//! Finite-difference checks of the two gradients the attacks rely on.

use rand::Rng;

use textinv::attack::{grad_wrt_state, score_candidates, BridgeContext, LossKind};
use textinv::corpus::{Vocab, BOS};
use textinv::modeling::{
    train_classifier, train_generator, ArchConfig, ClassifierModel, GeneratorModel, HiddenState, Perturbation,
    TrainConfig,
};
use textinv::nn::Mat;

use super::{marker_split, rng};

pub fn untrained_tiny(seed: u64) -> (Vocab, GeneratorModel, ClassifierModel) {
    let mut v = Vocab::new();
    for i in 0..40 {
        v.insert(&format!("t{i}"));
    }
    let g = GeneratorModel::new(ArchConfig::tiny(), &v, seed).unwrap();
    let c = ClassifierModel::new(ArchConfig::tiny(), &v, 3, seed + 1).unwrap();
    (v, g, c)
}

/// `|a - b| / max(|a|, |b|)` over whole vectors.
pub fn rel_err(a: &[f32], b: &[f32]) -> f64 {
    let norm = |v: &[f32]| v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let num = a
        .iter()
        .zip(b)
        .map(|(x, y)| ((x - y) as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    num / norm(a).max(norm(b)).max(1e-12)
}

/// Central difference of the bridge loss along `dir` (window layout).
fn fd_directional(
    g: &GeneratorModel,
    c: &ClassifierModel,
    state: &HiddenState,
    window: usize,
    ctx: &BridgeContext<'_>,
    dir: &[f32],
    h: f32,
) -> f64 {
    let w = window.min(state.len());
    let width = state.width();
    let loss_at = |s: f32| {
        let delta: Vec<Mat> = dir
            .chunks(w * width)
            .map(|d| Mat::from_vec(w, width, d.iter().map(|x| x * s).collect()))
            .collect();
        let st = state.add(&Perturbation::from_window(state, &delta).unwrap()).unwrap();
        grad_wrt_state(g, c, &st, window, ctx).unwrap().0 as f64
    };
    (loss_at(h) - loss_at(-h)) / (2.0 * h as f64)
}

fn unit(v: Vec<f32>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn window_of(p: &Perturbation, window: usize) -> Vec<f32> {
    let mut out = Vec::new();
    for m in p.layers() {
        let t = m.rows();
        for r in t - window.min(t)..t {
            out.extend_from_slice(m.row(r));
        }
    }
    out
}

pub struct StateCheck {
    /// Worst directional error per state, relative to |g|.
    pub errors: Vec<f64>,
    /// Whether every position outside the window got a zero gradient.
    pub window_respected: bool,
}

/// Checks `grad_wrt_state` on 20 prefixes of a marker corpus with 2-layer,
/// d=16 models trained briefly, cycling through both losses, both bridges,
/// two-step lookahead and the KL term. Each state is probed along the
/// gradient and two random unit directions.
pub fn state_gradient_check(seed: u64) -> StateCheck {
    const WINDOW: usize = 3;
    let (vocab, sp) = marker_split(seed);
    let g = &train_generator(&sp.public, &vocab, &TrainConfig::new(ArchConfig::tiny(), 8, seed)).unwrap();
    let c = &train_classifier(&sp.private, &vocab, &TrainConfig::new(ArchConfig::tiny(), 8, seed)).unwrap();
    let mut r = rng(seed + 9);
    let texts: Vec<&[usize]> = sp.private.texts().collect();
    let mut out = StateCheck {
        errors: Vec::new(),
        window_respected: true,
    };
    for case in 0..20usize {
        let text = texts[r.random_range(0..texts.len())];
        let cut = r.random_range(2..=text.len().max(2)).min(text.len());
        let mut tokens = vec![BOS];
        tokens.extend_from_slice(&text[..cut]);
        let state = g.prime(&tokens[..tokens.len() - 1]).unwrap();
        let content = &tokens[1..];
        let target = case % c.num_classes;
        let loss = if case % 2 == 0 {
            LossKind::CrossEntropy
        } else {
            LossKind::ModifiedEntropy
        };
        let reference = g.step(*content.last().unwrap(), &state).unwrap().0;
        let cands = score_candidates(c, content, &reference, 8, target, loss).unwrap();
        let ctx = BridgeContext {
            content,
            last: *content.last().unwrap(),
            target,
            loss,
            lookahead: 1 + (case % 3 == 1) as usize,
            kl_coeff: if case % 4 == 3 { 0.5 } else { 0.0 },
            reference: Some(&reference),
            candidates: (case % 3 == 2).then_some(&cands),
        };
        let (_, grad) = grad_wrt_state(g, c, &state, WINDOW, &ctx).unwrap();
        let analytic = window_of(&grad, WINDOW);
        let gnorm = analytic.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        let mut dirs = vec![unit(analytic.clone())];
        for _ in 0..2 {
            dirs.push(unit(
                (0..analytic.len()).map(|_| r.random_range(-1.0f32..1.0)).collect(),
            ));
        }
        let mut worst: f64 = 0.0;
        for u in &dirs {
            let want: f64 = analytic.iter().zip(u).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
            // f32 rounding swamps small steps, so the step grows as |g|
            // shrinks; the Richardson combination cancels the h^2 term
            let h = (1e-3 / gnorm).clamp(0.02, 0.4) as f32;
            let d1 = fd_directional(g, c, &state, WINDOW, &ctx, u, h);
            let d2 = fd_directional(g, c, &state, WINDOW, &ctx, u, h / 2.0);
            let got = (4.0 * d2 - d1) / 3.0;
            worst = worst.max((got - want).abs() / gnorm);
        }
        out.errors.push(worst);
        for m in grad.layers() {
            for row in 0..m.rows().saturating_sub(WINDOW) {
                out.window_respected &= m.row(row).iter().all(|&x| x == 0.0);
            }
        }
    }
    out
}

/// Relative error of `nll_grad_wrt_embeddings` against per-entry central
/// differences of `predict_soft`, for 20 random inputs to d=16 classifiers.
pub fn embedding_gradient_errors(seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..20)
        .map(|case| {
            let (_v, _g, c) = untrained_tiny(seed * 100 + case);
            let t = r.random_range(1..6);
            let x = Mat::randn(t, c.d_model(), 0.5, &mut r);
            let label = case as usize % 3;
            let (_, grad) = c.nll_grad_wrt_embeddings(&x, label).unwrap();
            let eps = 1e-2;
            let mut numeric = Vec::new();
            for i in 0..t {
                for j in 0..c.d_model() {
                    let nll = |h: f32| {
                        let mut y = x.clone();
                        y.set(i, j, y.get(i, j) + h);
                        -(c.predict_soft(&y).unwrap()[label] as f64).ln()
                    };
                    numeric.push(((nll(eps) - nll(-eps)) / (2.0 * eps as f64)) as f32);
                }
            }
            rel_err(grad.data(), &numeric)
        })
        .collect()
}
