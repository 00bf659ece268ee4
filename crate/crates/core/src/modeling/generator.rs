//! Causal transformer language model with a tied output head.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ArchConfig, TrainConfig};
use super::state::HiddenState;
use super::transformer::{block_forward, BlockParams, BlockVars, PastKv};
use crate::corpus::{Dataset, TokenId, Vocab, BOS, EOS, PAD, UNK};
use crate::error::{Error, Result};
use crate::nn::optim::clip_global_norm;
use crate::nn::{AdamW, Mat, Tape, Var};

const INIT_STD: f32 = 0.02;
const CLIP_NORM: f32 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct GeneratorParams {
    token_emb: Mat,
    pos_emb: Mat,
    blocks: Vec<BlockParams>,
    lnf_g: Mat,
    lnf_b: Mat,
}

impl GeneratorParams {
    fn init(arch: &ArchConfig, vocab_size: usize, rng: &mut ChaCha8Rng) -> Self {
        GeneratorParams {
            token_emb: Mat::randn(vocab_size, arch.d_model, INIT_STD, rng),
            pos_emb: Mat::randn(arch.max_positions, arch.d_model, INIT_STD, rng),
            blocks: (0..arch.layers).map(|_| BlockParams::init(arch, rng)).collect(),
            lnf_g: Mat::filled(1, arch.d_model, 1.0),
            lnf_b: Mat::zeros(1, arch.d_model),
        }
    }

    fn mats_mut(&mut self) -> Vec<&mut Mat> {
        let mut v: Vec<&mut Mat> = vec![&mut self.token_emb, &mut self.pos_emb];
        for b in &mut self.blocks {
            v.extend(b.mats_mut());
        }
        v.extend([&mut self.lnf_g, &mut self.lnf_b]);
        v
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        let mut s = vec![self.token_emb.shape(), self.pos_emb.shape()];
        for b in &self.blocks {
            s.extend(b.mats().iter().map(|m| m.shape()));
        }
        s.extend([self.lnf_g.shape(), self.lnf_b.shape()]);
        s
    }

    fn decay_mask(&self) -> Vec<bool> {
        let mut m = vec![false, false];
        for _ in &self.blocks {
            m.extend(BlockParams::decay_mask());
        }
        m.extend([false, false]);
        m
    }
}

pub struct GeneratorVars {
    token_emb: Var,
    pos_emb: Var,
    blocks: Vec<BlockVars>,
    lnf_g: Var,
    lnf_b: Var,
}

impl GeneratorVars {
    fn all(&self) -> Vec<Var> {
        let mut v = vec![self.token_emb, self.pos_emb];
        for b in &self.blocks {
            v.extend(b.vars());
        }
        v.extend([self.lnf_g, self.lnf_b]);
        v
    }

    pub fn token_embeddings(&self) -> Var {
        self.token_emb
    }
}

/// Output of one forward call on a tape.
pub struct TapeStep {
    /// Next-token logits, one row per input position.
    pub logits: Var,
    /// `[keys | values]` of the input positions, one `t x 2d` var per layer.
    pub new_kv: Vec<Var>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Decoding {
    Greedy,
    TopK(usize),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMeta {
    pub epochs_run: usize,
    pub epoch_losses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorModel {
    pub arch: ArchConfig,
    pub vocab_size: usize,
    pub vocab_hash: String,
    pub meta: GeneratorMeta,
    params: GeneratorParams,
}

impl GeneratorModel {
    pub fn new(arch: ArchConfig, vocab: &Vocab, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(GeneratorModel {
            params: GeneratorParams::init(&arch, vocab.len(), &mut rng),
            arch,
            vocab_size: vocab.len(),
            vocab_hash: vocab.hash(),
            meta: GeneratorMeta::default(),
        })
    }

    pub fn embedding_table(&self) -> &Mat {
        &self.params.token_emb
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>, trainable: bool) -> GeneratorVars {
        let p = &self.params;
        GeneratorVars {
            token_emb: tape.borrowed(&p.token_emb, trainable),
            pos_emb: tape.borrowed(&p.pos_emb, trainable),
            blocks: p.blocks.iter().map(|b| b.bind(tape, trainable)).collect(),
            lnf_g: tape.borrowed(&p.lnf_g, trainable),
            lnf_b: tape.borrowed(&p.lnf_b, trainable),
        }
    }

    /// Runs `inputs` (`t x d` embeddings) after `past` (one `s x 2d` var per
    /// layer, or `None` for an empty cache of length 0).
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape<'_>,
        vars: &GeneratorVars,
        inputs: Var,
        past: Option<&[Var]>,
    ) -> Result<TapeStep> {
        let t = tape.value(inputs).rows();
        self.forward_packed(tape, vars, inputs, &[t], past)
    }

    /// Like [`Self::forward_on_tape`] for several sequences packed row-wise
    /// with lengths `segments`; `past` is allowed only for one segment.
    pub fn forward_packed(
        &self,
        tape: &mut Tape<'_>,
        vars: &GeneratorVars,
        inputs: Var,
        segments: &[usize],
        past: Option<&[Var]>,
    ) -> Result<TapeStep> {
        let d = self.arch.d_model;
        let past_len = past.map_or(0, |p| tape.value(p[0]).rows());
        if past.is_some() && segments.len() != 1 {
            return Err(Error::Shape("a cached state needs exactly one sequence".into()));
        }
        let t = segments.iter().copied().max().unwrap_or(0);
        if past_len + t > self.arch.max_positions {
            return Err(Error::Shape(format!(
                "{} positions exceed the limit {}",
                past_len + t,
                self.arch.max_positions
            )));
        }
        if let Some(p) = past {
            if p.len() != self.arch.layers || p.iter().any(|&v| tape.value(v).cols() != 2 * d) {
                return Err(Error::Shape("hidden state does not match the generator".into()));
            }
        }
        let positions: Vec<usize> = segments.iter().flat_map(|&n| past_len..past_len + n).collect();
        let pos = tape.gather(vars.pos_emb, &positions);
        let mut x = tape.add(inputs, pos);
        let mut new_kv = Vec::with_capacity(self.arch.layers);
        for (l, bv) in vars.blocks.iter().enumerate() {
            let pk = past.filter(|_| past_len > 0).map(|p| PastKv {
                keys: tape.slice_cols(p[l], 0, d),
                values: tape.slice_cols(p[l], d, d),
                len: past_len,
            });
            let out = block_forward(tape, bv, &self.arch, x, segments, pk, true);
            new_kv.push(tape.concat_cols(&[out.keys, out.values]));
            x = out.hidden;
        }
        let x = tape.layer_norm(x, vars.lnf_g, vars.lnf_b);
        let logits = tape.matmul_bt(x, vars.token_emb);
        Ok(TapeStep { logits, new_kv })
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        match tokens.iter().find(|&&t| t >= self.vocab_size) {
            Some(&id) => Err(Error::Vocab {
                id,
                size: self.vocab_size,
            }),
            None => Ok(()),
        }
    }

    /// Hidden state after consuming `tokens`.
    pub fn prime(&self, tokens: &[TokenId]) -> Result<HiddenState> {
        self.check_tokens(tokens)?;
        if tokens.is_empty() {
            return Ok(HiddenState::empty(self.arch.layers, self.arch.d_model));
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let emb = tape.gather(vars.token_emb, tokens);
        let out = self.forward_on_tape(&mut tape, &vars, emb, None)?;
        HiddenState::from_layers(out.new_kv.iter().map(|&v| tape.value(v).clone()).collect())
    }

    /// Feeds `token` after `state`: returns the next-token distribution and
    /// the state extended by one position.
    pub fn step(&self, token: TokenId, state: &HiddenState) -> Result<(Vec<f32>, HiddenState)> {
        self.check_tokens(&[token])?;
        if state.num_layers() != self.arch.layers || state.width() != 2 * self.arch.d_model {
            return Err(Error::Shape("hidden state does not match the generator".into()));
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let past: Vec<Var> = state.layers().iter().map(|m| tape.borrowed(m, false)).collect();
        let emb = tape.gather(vars.token_emb, &[token]);
        let out = self.forward_on_tape(&mut tape, &vars, emb, (!state.is_empty()).then_some(&past[..]))?;
        let probs = tape.softmax_rows(out.logits, None);
        let rows: Vec<Mat> = out.new_kv.iter().map(|&v| tape.value(v).clone()).collect();
        Ok((tape.value(probs).data().to_vec(), state.push(&rows)?))
    }

    /// Longest content sequence (excluding BOS) the position table admits.
    pub fn max_content_len(&self) -> usize {
        self.arch.max_positions - 1
    }

    /// Continues `prefix` until EOS or `max_len` tokens. The returned
    /// sequence starts with `prefix` and never contains BOS or EOS.
    pub fn generate(&self, prefix: &[TokenId], max_len: usize, decoding: Decoding, seed: u64) -> Result<Vec<TokenId>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let max_len = max_len.min(self.max_content_len());
        let mut out = prefix.to_vec();
        if out.len() >= max_len {
            return Ok(out);
        }
        let mut context = vec![BOS];
        context.extend_from_slice(prefix);
        let mut state = self.prime(&context[..context.len() - 1])?;
        let mut last = *context.last().unwrap();
        while out.len() < max_len {
            let (dist, next_state) = self.step(last, &state)?;
            let tok = select_token(&dist, decoding, &mut rng)?;
            if tok == EOS {
                break;
            }
            out.push(tok);
            state = next_state;
            last = tok;
        }
        Ok(out)
    }

    /// `ln p(tokens[i+1] | tokens[..=i])` for every `i`.
    pub fn token_log_probs(&self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        self.check_tokens(tokens)?;
        if tokens.len() < 2 {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let emb = tape.gather(vars.token_emb, &tokens[..tokens.len() - 1]);
        let out = self.forward_on_tape(&mut tape, &vars, emb, None)?;
        let logits = tape.value(out.logits);
        Ok((0..logits.rows())
            .map(|r| {
                let row = logits.row(r);
                let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
                let lse = row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln() + max;
                row[tokens[r + 1]] as f64 - lse
            })
            .collect())
    }

    /// Mean next-token cross-entropy over `[BOS] text [EOS]` for every text.
    pub fn mean_nll(&self, data: &Dataset) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for text in data.texts() {
            let seq = lm_sequence(text, self.arch.max_positions);
            for lp in self.token_log_probs(&seq)? {
                total -= lp;
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::UndefinedMetric("no tokens to score".into()));
        }
        Ok(total / count as f64)
    }
}

/// Tokens that decoding never emits.
pub fn is_suppressed(token: TokenId) -> bool {
    token == PAD || token == BOS || token == UNK
}

/// Picks the next token from `dist` with PAD, BOS and UNK excluded.
pub fn select_token<R: Rng + ?Sized>(dist: &[f32], decoding: Decoding, rng: &mut R) -> Result<TokenId> {
    let mut cands: Vec<(TokenId, f32)> = dist
        .iter()
        .enumerate()
        .filter(|&(t, &p)| !is_suppressed(t) && p.is_finite())
        .map(|(t, &p)| (t, p))
        .collect();
    if cands.is_empty() {
        return Err(Error::Numerical {
            step: 0,
            what: "no admissible next token".into(),
        });
    }
    // stable sort keeps smaller ids first among equal probabilities
    cands.sort_by(|a, b| b.1.total_cmp(&a.1));
    match decoding {
        Decoding::Greedy => Ok(cands[0].0),
        Decoding::TopK(k) => {
            let top = &cands[..k.max(1).min(cands.len())];
            if top.iter().all(|c| c.1 <= 0.0) {
                return Ok(top[0].0);
            }
            let w = WeightedIndex::new(top.iter().map(|c| c.1.max(0.0))).map_err(|e| Error::Numerical {
                step: 0,
                what: format!("sampling weights: {e}"),
            })?;
            Ok(top[w.sample(rng)].0)
        }
    }
}

/// `[BOS] text [EOS]`, truncated to the position limit.
fn lm_sequence(text: &[TokenId], max_positions: usize) -> Vec<TokenId> {
    let mut seq = Vec::with_capacity(text.len() + 2);
    seq.push(BOS);
    seq.extend_from_slice(text);
    seq.push(EOS);
    // one extra token is allowed because the last one is only a target
    seq.truncate(max_positions + 1);
    seq
}

/// Trains a fresh generator by next-token cross-entropy on the texts of
/// `public` (labels are never read).
pub fn train_generator(public: &Dataset, vocab: &Vocab, cfg: &TrainConfig) -> Result<GeneratorModel> {
    cfg.validate()?;
    if public.is_empty() {
        return Err(Error::Invalid("generator training needs a nonempty corpus".into()));
    }
    let mut model = GeneratorModel::new(cfg.arch.clone(), vocab, cfg.seed)?;
    let mut opt = AdamW::new(&model.params.shapes(), cfg.learning_rate, cfg.weight_decay);
    let decay = model.params.decay_mask();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e4e_7a70);
    let seqs: Vec<Vec<TokenId>> = public
        .texts()
        .map(|t| lm_sequence(t, model.arch.max_positions))
        .collect();
    let mut order: Vec<usize> = (0..seqs.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, mut grads) = {
                let mut tape = Tape::new();
                let vars = model.bind(&mut tape, true);
                let mut inputs = Vec::new();
                let mut targets = Vec::new();
                let mut segments = Vec::with_capacity(batch.len());
                for &i in batch {
                    let seq = &seqs[i];
                    inputs.extend_from_slice(&seq[..seq.len() - 1]);
                    targets.extend_from_slice(&seq[1..]);
                    segments.push(seq.len() - 1);
                }
                let emb = tape.gather(vars.token_emb, &inputs);
                let out = model.forward_packed(&mut tape, &vars, emb, &segments, None)?;
                let mean = tape.cross_entropy(out.logits, &targets);
                let loss = tape.scalar(mean);
                let mut g = tape.backward(mean);
                let grads: Vec<Mat> = vars
                    .all()
                    .into_iter()
                    .map(|v| {
                        g.take(v)
                            .unwrap_or_else(|| Mat::zeros(tape.value(v).rows(), tape.value(v).cols()))
                    })
                    .collect();
                (loss, grads)
            };
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            clip_global_norm(&mut grads, CLIP_NORM);
            opt.step(&mut model.params.mats_mut(), &grads, &decay);
            loss_sum += loss as f64;
            batches += 1;
        }
        model.meta.epoch_losses.push(loss_sum / batches.max(1) as f64);
        model.meta.epochs_run = epoch + 1;
    }
    Ok(model)
}
