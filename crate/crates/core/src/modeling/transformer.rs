//! Pre-LayerNorm transformer blocks shared by both models.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ArchConfig;
use crate::nn::{Mat, Tape, Var};

const INIT_STD: f32 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub ln1_g: Mat,
    pub ln1_b: Mat,
    pub w_qkv: Mat,
    pub b_qkv: Mat,
    pub w_o: Mat,
    pub b_o: Mat,
    pub ln2_g: Mat,
    pub ln2_b: Mat,
    pub w_fc: Mat,
    pub b_fc: Mat,
    pub w_proj: Mat,
    pub b_proj: Mat,
}

#[derive(Clone, Copy, Debug)]
pub struct BlockVars {
    ln1_g: Var,
    ln1_b: Var,
    w_qkv: Var,
    b_qkv: Var,
    w_o: Var,
    b_o: Var,
    ln2_g: Var,
    ln2_b: Var,
    w_fc: Var,
    b_fc: Var,
    w_proj: Var,
    b_proj: Var,
}

impl BlockParams {
    pub fn init<R: Rng + ?Sized>(arch: &ArchConfig, rng: &mut R) -> Self {
        let d = arch.d_model;
        let resid_std = INIT_STD / (2.0 * arch.layers as f32).sqrt();
        BlockParams {
            ln1_g: Mat::filled(1, d, 1.0),
            ln1_b: Mat::zeros(1, d),
            w_qkv: Mat::randn(d, 3 * d, INIT_STD, rng),
            b_qkv: Mat::zeros(1, 3 * d),
            w_o: Mat::randn(d, d, resid_std, rng),
            b_o: Mat::zeros(1, d),
            ln2_g: Mat::filled(1, d, 1.0),
            ln2_b: Mat::zeros(1, d),
            w_fc: Mat::randn(d, arch.d_ff, INIT_STD, rng),
            b_fc: Mat::zeros(1, arch.d_ff),
            w_proj: Mat::randn(arch.d_ff, d, resid_std, rng),
            b_proj: Mat::zeros(1, d),
        }
    }

    pub fn mats(&self) -> [&Mat; 12] {
        [
            &self.ln1_g,
            &self.ln1_b,
            &self.w_qkv,
            &self.b_qkv,
            &self.w_o,
            &self.b_o,
            &self.ln2_g,
            &self.ln2_b,
            &self.w_fc,
            &self.b_fc,
            &self.w_proj,
            &self.b_proj,
        ]
    }

    pub fn mats_mut(&mut self) -> [&mut Mat; 12] {
        [
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.w_qkv,
            &mut self.b_qkv,
            &mut self.w_o,
            &mut self.b_o,
            &mut self.ln2_g,
            &mut self.ln2_b,
            &mut self.w_fc,
            &mut self.b_fc,
            &mut self.w_proj,
            &mut self.b_proj,
        ]
    }

    /// Weight decay applies to the four projection matrices only.
    pub fn decay_mask() -> [bool; 12] {
        [
            false, false, true, false, true, false, false, false, true, false, true, false,
        ]
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>, trainable: bool) -> BlockVars {
        let mut b = |m: &'p Mat| tape.borrowed(m, trainable);
        BlockVars {
            ln1_g: b(&self.ln1_g),
            ln1_b: b(&self.ln1_b),
            w_qkv: b(&self.w_qkv),
            b_qkv: b(&self.b_qkv),
            w_o: b(&self.w_o),
            b_o: b(&self.b_o),
            ln2_g: b(&self.ln2_g),
            ln2_b: b(&self.ln2_b),
            w_fc: b(&self.w_fc),
            b_fc: b(&self.b_fc),
            w_proj: b(&self.w_proj),
            b_proj: b(&self.b_proj),
        }
    }
}

impl BlockVars {
    pub fn vars(&self) -> [Var; 12] {
        [
            self.ln1_g,
            self.ln1_b,
            self.w_qkv,
            self.b_qkv,
            self.w_o,
            self.b_o,
            self.ln2_g,
            self.ln2_b,
            self.w_fc,
            self.b_fc,
            self.w_proj,
            self.b_proj,
        ]
    }
}

/// Cached keys and values of earlier positions for one layer.
#[derive(Clone, Copy, Debug)]
pub struct PastKv {
    pub keys: Var,
    pub values: Var,
    pub len: usize,
}

pub struct BlockOutput {
    pub hidden: Var,
    /// Keys and values of the positions processed in this call.
    pub keys: Var,
    pub values: Var,
}

/// One block over `x` (`t x d`), which packs one or more sequences whose
/// lengths are `segments` (summing to `t`). Attention never crosses a
/// segment boundary. Causal blocks attend to `past` plus the positions up
/// to and including their own; `past` requires a single segment.
pub fn block_forward(
    tape: &mut Tape<'_>,
    bv: &BlockVars,
    arch: &ArchConfig,
    x: Var,
    segments: &[usize],
    past: Option<PastKv>,
    causal: bool,
) -> BlockOutput {
    let d = arch.d_model;
    let dh = arch.head_dim();
    debug_assert_eq!(segments.iter().sum::<usize>(), tape.value(x).rows());
    debug_assert!(past.is_none() || segments.len() == 1);

    let xn = tape.layer_norm(x, bv.ln1_g, bv.ln1_b);
    let qkv = tape.matmul(xn, bv.w_qkv);
    let qkv = tape.add_row(qkv, bv.b_qkv);
    let q = tape.slice_cols(qkv, 0, d);
    let k = tape.slice_cols(qkv, d, d);
    let v = tape.slice_cols(qkv, 2 * d, d);
    let scale = 1.0 / (dh as f32).sqrt();

    let mut seg_outputs = Vec::with_capacity(segments.len());
    let mut start = 0;
    for &len in segments {
        let (qs, ks, vs) = if segments.len() == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_rows(q, start, len),
                tape.slice_rows(k, start, len),
                tape.slice_rows(v, start, len),
            )
        };
        let (k_all, v_all, past_len) = match past {
            Some(p) if p.len > 0 => (
                tape.concat_rows(&[p.keys, ks]),
                tape.concat_rows(&[p.values, vs]),
                p.len,
            ),
            _ => (ks, vs, 0),
        };
        let mut heads = Vec::with_capacity(arch.heads);
        for h in 0..arch.heads {
            let qh = tape.slice_cols(qs, h * dh, dh);
            let kh = tape.slice_cols(k_all, h * dh, dh);
            let vh = tape.slice_cols(v_all, h * dh, dh);
            let scores = tape.matmul_bt(qh, kh);
            let scores = tape.affine(scores, scale, 0.0);
            let att = tape.softmax_rows(scores, causal.then_some(past_len));
            heads.push(tape.matmul(att, vh));
        }
        seg_outputs.push(if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)
        });
        start += len;
    }
    let merged = if seg_outputs.len() == 1 {
        seg_outputs[0]
    } else {
        tape.concat_rows(&seg_outputs)
    };
    let attn = tape.matmul(merged, bv.w_o);
    let attn = tape.add_row(attn, bv.b_o);
    let h1 = tape.add(x, attn);

    let hn = tape.layer_norm(h1, bv.ln2_g, bv.ln2_b);
    let f = tape.matmul(hn, bv.w_fc);
    let f = tape.add_row(f, bv.b_fc);
    let f = tape.gelu(f);
    let f = tape.matmul(f, bv.w_proj);
    let f = tape.add_row(f, bv.b_proj);
    let hidden = tape.add(h1, f);
    BlockOutput {
        hidden,
        keys: k,
        values: v,
    }
}
