//! Bidirectional transformer encoder with a mean-pooled classification head.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ArchConfig, TrainConfig};
use super::transformer::{block_forward, BlockParams, BlockVars};
use crate::corpus::{Dataset, TokenId, Vocab};
use crate::error::{Error, Result};
use crate::nn::optim::clip_global_norm;
use crate::nn::{AdamW, Mat, Tape, Var};

const INIT_STD: f32 = 0.02;
const CLIP_NORM: f32 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ClassifierParams {
    token_emb: Mat,
    pos_emb: Mat,
    blocks: Vec<BlockParams>,
    lnf_g: Mat,
    lnf_b: Mat,
    head_w: Mat,
    head_b: Mat,
}

/// Parameters of a classifier bound to a tape.
pub struct ClassifierVars {
    token_emb: Var,
    pos_emb: Var,
    blocks: Vec<BlockVars>,
    lnf_g: Var,
    lnf_b: Var,
    head_w: Var,
    head_b: Var,
}

impl ClassifierVars {
    fn all(&self) -> Vec<Var> {
        let mut v = vec![self.token_emb, self.pos_emb];
        for b in &self.blocks {
            v.extend(b.vars());
        }
        v.extend([self.lnf_g, self.lnf_b, self.head_w, self.head_b]);
        v
    }

    pub fn token_embeddings(&self) -> Var {
        self.token_emb
    }
}

impl ClassifierParams {
    fn init(arch: &ArchConfig, vocab_size: usize, num_classes: usize, rng: &mut ChaCha8Rng) -> Self {
        ClassifierParams {
            token_emb: Mat::randn(vocab_size, arch.d_model, INIT_STD, rng),
            pos_emb: Mat::randn(arch.max_positions, arch.d_model, INIT_STD, rng),
            blocks: (0..arch.layers).map(|_| BlockParams::init(arch, rng)).collect(),
            lnf_g: Mat::filled(1, arch.d_model, 1.0),
            lnf_b: Mat::zeros(1, arch.d_model),
            head_w: Mat::randn(arch.d_model, num_classes, INIT_STD, rng),
            head_b: Mat::zeros(1, num_classes),
        }
    }

    fn mats_mut(&mut self) -> Vec<&mut Mat> {
        let mut v: Vec<&mut Mat> = vec![&mut self.token_emb, &mut self.pos_emb];
        for b in &mut self.blocks {
            v.extend(b.mats_mut());
        }
        v.extend([&mut self.lnf_g, &mut self.lnf_b, &mut self.head_w, &mut self.head_b]);
        v
    }

    fn decay_mask(&self) -> Vec<bool> {
        let mut m = vec![false, false];
        for _ in &self.blocks {
            m.extend(BlockParams::decay_mask());
        }
        m.extend([false, false, true, false]);
        m
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        let mut s = vec![self.token_emb.shape(), self.pos_emb.shape()];
        for b in &self.blocks {
            s.extend(b.mats().iter().map(|m| m.shape()));
        }
        s.extend([
            self.lnf_g.shape(),
            self.lnf_b.shape(),
            self.head_w.shape(),
            self.head_b.shape(),
        ]);
        s
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMeta {
    pub epochs_run: usize,
    /// Mean training loss of every epoch, in order.
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    /// Set when a target accuracy was requested but not reached.
    pub below_threshold: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub arch: ArchConfig,
    pub num_classes: usize,
    pub vocab_size: usize,
    pub vocab_hash: String,
    pub meta: ClassifierMeta,
    params: ClassifierParams,
}

impl ClassifierModel {
    pub fn new(arch: ArchConfig, vocab: &Vocab, num_classes: usize, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(ClassifierModel {
            params: ClassifierParams::init(&arch, vocab.len(), num_classes, &mut rng),
            arch,
            num_classes,
            vocab_size: vocab.len(),
            vocab_hash: vocab.hash(),
            meta: ClassifierMeta::default(),
        })
    }

    pub fn embedding_table(&self) -> &Mat {
        &self.params.token_emb
    }

    pub fn d_model(&self) -> usize {
        self.arch.d_model
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>, trainable: bool) -> ClassifierVars {
        let p = &self.params;
        let token_emb = tape.borrowed(&p.token_emb, trainable);
        let pos_emb = tape.borrowed(&p.pos_emb, trainable);
        let blocks = p.blocks.iter().map(|b| b.bind(tape, trainable)).collect();
        ClassifierVars {
            token_emb,
            pos_emb,
            blocks,
            lnf_g: tape.borrowed(&p.lnf_g, trainable),
            lnf_b: tape.borrowed(&p.lnf_b, trainable),
            head_w: tape.borrowed(&p.head_w, trainable),
            head_b: tape.borrowed(&p.head_b, trainable),
        }
    }

    /// Logits (`1 x N`) for an embedding sequence (`t x d`) on a tape.
    pub fn logits_on_tape(&self, tape: &mut Tape<'_>, vars: &ClassifierVars, embeddings: Var) -> Var {
        let t = tape.value(embeddings).rows();
        self.logits_packed(tape, vars, embeddings, &[t])
    }

    /// Logits (`B x N`) for `B` embedding sequences packed row-wise, with
    /// lengths `segments`.
    pub fn logits_packed(
        &self,
        tape: &mut Tape<'_>,
        vars: &ClassifierVars,
        embeddings: Var,
        segments: &[usize],
    ) -> Var {
        let positions: Vec<usize> = segments.iter().flat_map(|&n| 0..n).collect();
        let pos = tape.gather(vars.pos_emb, &positions);
        let mut x = tape.add(embeddings, pos);
        for bv in &vars.blocks {
            x = block_forward(tape, bv, &self.arch, x, segments, None, false).hidden;
        }
        let x = tape.layer_norm(x, vars.lnf_g, vars.lnf_b);
        let pooled = if segments.len() == 1 {
            tape.mean_rows(x)
        } else {
            let mut start = 0;
            let rows: Vec<Var> = segments
                .iter()
                .map(|&n| {
                    let seg = tape.slice_rows(x, start, n);
                    start += n;
                    tape.mean_rows(seg)
                })
                .collect();
            tape.concat_rows(&rows)
        };
        let logits = tape.matmul(pooled, vars.head_w);
        tape.add_row(logits, vars.head_b)
    }

    /// Probability row (`1 x N`) on a tape.
    pub fn probs_on_tape(&self, tape: &mut Tape<'_>, vars: &ClassifierVars, embeddings: Var) -> Var {
        let logits = self.logits_on_tape(tape, vars, embeddings);
        tape.softmax_rows(logits, None)
    }

    /// Embedding rows of `tokens`, truncated to the position limit.
    pub fn embed_on_tape(&self, tape: &mut Tape<'_>, vars: &ClassifierVars, tokens: &[TokenId]) -> Var {
        let n = tokens.len().min(self.arch.max_positions);
        tape.gather(vars.token_emb, &tokens[..n])
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Invalid("cannot classify an empty sequence".into()));
        }
        match tokens.iter().find(|&&t| t >= self.vocab_size) {
            Some(&id) => Err(Error::Vocab {
                id,
                size: self.vocab_size,
            }),
            None => Ok(()),
        }
    }

    /// Class probabilities for a token sequence (inputs beyond the position
    /// limit are dropped).
    pub fn predict(&self, tokens: &[TokenId]) -> Result<Vec<f32>> {
        self.check_tokens(tokens)?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let emb = self.embed_on_tape(&mut tape, &vars, tokens);
        let p = self.probs_on_tape(&mut tape, &vars, emb);
        Ok(tape.value(p).data().to_vec())
    }

    /// [`predict`](Self::predict) for many sequences in one packed pass.
    pub fn predict_batch(&self, seqs: &[Vec<TokenId>]) -> Result<Vec<Vec<f32>>> {
        if seqs.is_empty() {
            return Ok(Vec::new());
        }
        let mut ids = Vec::new();
        let mut segments = Vec::with_capacity(seqs.len());
        for s in seqs {
            self.check_tokens(s)?;
            let n = s.len().min(self.arch.max_positions);
            ids.extend_from_slice(&s[..n]);
            segments.push(n);
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let emb = tape.gather(vars.token_emb, &ids);
        let logits = self.logits_packed(&mut tape, &vars, emb, &segments);
        let p = tape.softmax_rows(logits, None);
        let p = tape.value(p);
        Ok((0..seqs.len()).map(|i| p.row(i).to_vec()).collect())
    }

    /// Class probabilities for an embedding sequence (`t x d`).
    pub fn predict_soft(&self, embeddings: &Mat) -> Result<Vec<f32>> {
        if embeddings.cols() != self.arch.d_model || embeddings.rows() == 0 {
            return Err(Error::Shape(format!(
                "expected t x {} embeddings with t >= 1, got {:?}",
                self.arch.d_model,
                embeddings.shape()
            )));
        }
        if embeddings.rows() > self.arch.max_positions {
            return Err(Error::Shape(format!(
                "{} positions exceed the limit {}",
                embeddings.rows(),
                self.arch.max_positions
            )));
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let emb = tape.borrowed(embeddings, false);
        let p = self.probs_on_tape(&mut tape, &vars, emb);
        Ok(tape.value(p).data().to_vec())
    }

    /// Gradient of `-log p_label` with respect to the embedding sequence.
    pub fn nll_grad_wrt_embeddings(&self, embeddings: &Mat, label: usize) -> Result<(f32, Mat)> {
        if embeddings.cols() != self.arch.d_model {
            return Err(Error::Shape("embedding width mismatch".into()));
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let emb = tape.leaf(embeddings.clone(), true);
        let logits = self.logits_on_tape(&mut tape, &vars, emb);
        let loss = tape.cross_entropy(logits, &[label]);
        let mut grads = tape.backward(loss);
        let g = grads
            .take(emb)
            .unwrap_or_else(|| Mat::zeros(embeddings.rows(), embeddings.cols()));
        Ok((tape.scalar(loss), g))
    }

    pub fn argmax(&self, tokens: &[TokenId]) -> Result<usize> {
        Ok(argmax(&self.predict(tokens)?))
    }

    /// Fraction of labeled examples classified correctly.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        let mut correct = 0usize;
        let mut total = 0usize;
        for ex in &data.examples {
            let label = ex
                .label
                .ok_or_else(|| Error::Invalid("accuracy needs labeled data".into()))?;
            if self.argmax(&ex.tokens)? == label {
                correct += 1;
            }
            total += 1;
        }
        if total == 0 {
            return Err(Error::UndefinedMetric("accuracy of an empty dataset".into()));
        }
        Ok(correct as f64 / total as f64)
    }

    /// Zeroes the classification head so every input maps to the uniform
    /// distribution (used to check that a constant loss has zero gradient).
    pub fn zero_head(&mut self) {
        self.params.head_w.scale(0.0);
        self.params.head_b.scale(0.0);
    }
}

pub fn argmax(p: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Trains a fresh classifier on labeled data.
pub fn train_classifier(private: &Dataset, vocab: &Vocab, cfg: &TrainConfig) -> Result<ClassifierModel> {
    train_classifier_until(private, vocab, cfg, None)
}

/// Like [`train_classifier`] but stops after the first epoch whose training
/// accuracy exceeds `target_accuracy`.
pub fn train_classifier_until(
    private: &Dataset,
    vocab: &Vocab,
    cfg: &TrainConfig,
    target_accuracy: Option<f64>,
) -> Result<ClassifierModel> {
    cfg.validate()?;
    if !private.is_labeled() {
        return Err(Error::Invalid("classifier training needs labeled data".into()));
    }
    if private.len() < private.num_classes {
        return Err(Error::Invalid(format!(
            "need at least {} examples, got {}",
            private.num_classes,
            private.len()
        )));
    }
    let mut model = ClassifierModel::new(cfg.arch.clone(), vocab, private.num_classes, cfg.seed)?;
    let mut opt = AdamW::new(&model.params.shapes(), cfg.learning_rate, cfg.weight_decay);
    let decay = model.params.decay_mask();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_c1a5);
    let mut order: Vec<usize> = (0..private.len()).collect();

    let mut reached = target_accuracy.is_none();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, mut grads) = {
                let mut tape = Tape::new();
                let vars = model.bind(&mut tape, true);
                let mut ids = Vec::new();
                let mut segments = Vec::with_capacity(batch.len());
                let mut labels = Vec::with_capacity(batch.len());
                for &i in batch {
                    let ex = &private.examples[i];
                    let n = ex.tokens.len().min(model.arch.max_positions);
                    ids.extend_from_slice(&ex.tokens[..n]);
                    segments.push(n);
                    labels.push(ex.label.unwrap());
                }
                let emb = tape.gather(vars.token_emb, &ids);
                let logits = model.logits_packed(&mut tape, &vars, emb, &segments);
                let mean = tape.cross_entropy(logits, &labels);
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
        if let Some(target) = target_accuracy {
            let acc = model.accuracy(private)?;
            model.meta.train_accuracy = acc;
            if acc > target {
                reached = true;
                break;
            }
        }
    }
    model.meta.train_accuracy = model.accuracy(private)?;
    model.meta.below_threshold = !reached;
    Ok(model)
}
