//! Hidden-state perturbation inversion and its baselines.

pub mod bridge;
pub mod gumbel;
pub mod loss;
pub mod suite;
pub mod tr;
pub mod vmi;
pub mod vtg;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact::Stamp;
use crate::corpus::{Template, TokenId, Vocab};
use crate::error::{Error, Result};
use crate::modeling::{ClassifierModel, Decoding};

pub use bridge::{grad_wrt_state, score_candidates, soft_forward_bridge, BridgeContext, BridgeKind, Candidates};
pub use gumbel::{gumbel_attack, gumbel_softmax};
pub use loss::{attack_loss, cross_entropy_loss, modified_entropy_loss, LossKind};
pub use suite::{item_seed, run_attack_suite, AttackModels, ItemFailure, SuiteOutput};
pub use tr::tr_attack;
pub use vmi::vmi_attack;
pub use vtg::vtg_generate;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "tr")]
    Tr,
    #[serde(rename = "vmi")]
    Vmi,
    #[serde(rename = "vtg")]
    Vtg,
    #[serde(rename = "gumbel")]
    Gumbel,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Tr, Method::Vmi, Method::Vtg, Method::Gumbel];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Tr => "tr",
            Method::Vmi => "vmi",
            Method::Vtg => "vtg",
            Method::Gumbel => "gumbel",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Method::ALL.into_iter().find(|m| m.tag() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub method: Method,
    pub loss_kind: LossKind,
    /// Class the attack steers toward; suites overwrite it per item.
    pub target_label: usize,
    /// Perturbation step size.
    pub step_size: f32,
    pub grad_steps_per_token: usize,
    /// Descent stops (or is skipped) once the loss is within this margin of
    /// its floor: zero, or the best candidate's loss under the expected-loss
    /// bridge.
    pub loss_tolerance: f32,
    /// Number of most recent state positions that may be perturbed.
    pub window_mask: usize,
    pub kl_coeff: f32,
    /// Output length in tokens (template included).
    pub max_len: usize,
    pub lookahead: usize,
    pub bridge: BridgeKind,
    /// Number of next-token candidates scored by the expected-loss bridge.
    pub bridge_candidates: usize,
    /// Maximum number of step halvings per descent iteration.
    pub max_halvings: usize,
    pub vmi_epochs: usize,
    pub vmi_step_size: f32,
    pub gumbel_epochs: usize,
    pub gumbel_tau: f32,
    pub gumbel_lr: f32,
    /// Initial coefficient of the generated token at each position.
    pub gumbel_init_boost: f32,
    pub decoding: Decoding,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            method: Method::Tr,
            loss_kind: LossKind::CrossEntropy,
            target_label: 0,
            step_size: 0.02,
            grad_steps_per_token: 3,
            loss_tolerance: 0.0,
            window_mask: 3,
            kl_coeff: 0.0,
            max_len: 20,
            lookahead: 1,
            bridge: BridgeKind::ExpectedEmbedding,
            bridge_candidates: 64,
            max_halvings: 5,
            vmi_epochs: 50,
            vmi_step_size: 0.1,
            gumbel_epochs: 50,
            gumbel_tau: 0.5,
            gumbel_lr: 0.1,
            gumbel_init_boost: 2.0,
            decoding: Decoding::TopK(10),
            seed: 0,
        }
    }
}

impl AttackConfig {
    /// Settings tuned for the small from-scratch models used here. The
    /// defaults move each layer's state by 0.02 per step, which barely
    /// changes these generators' next-token distributions; this preset takes
    /// larger steps, stops as soon as the loss is near its floor, keeps the
    /// KL term on for fluency and scores real candidate tokens.
    pub fn calibrated() -> Self {
        AttackConfig {
            step_size: 2.0,
            grad_steps_per_token: 10,
            loss_tolerance: 0.5,
            kl_coeff: 0.5,
            bridge: BridgeKind::ExpectedLoss,
            bridge_candidates: 64,
            ..AttackConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("attack config: {what}")));
        if self.max_len == 0 {
            return bad("max_len must be at least 1");
        }
        if self.window_mask == 0 {
            return bad("window_mask must be at least 1");
        }
        if self.lookahead == 0 {
            return bad("lookahead must be at least 1");
        }
        if self.bridge == BridgeKind::ExpectedLoss && (self.lookahead != 1 || self.bridge_candidates == 0) {
            return bad("the expected-loss bridge needs lookahead 1 and at least one candidate");
        }
        if !(self.step_size >= 0.0)
            || !(self.kl_coeff >= 0.0)
            || !(self.vmi_step_size >= 0.0)
            || !(self.loss_tolerance >= 0.0)
        {
            return bad("step sizes and the KL coefficient must be nonnegative");
        }
        if !(self.gumbel_tau > 0.0) || !(self.gumbel_lr >= 0.0) {
            return bad("gumbel temperature must be positive");
        }
        if let Decoding::TopK(0) = self.decoding {
            return bad("top-k needs k >= 1");
        }
        Ok(())
    }
}

/// One reconstructed text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvertedText {
    pub tokens: Vec<TokenId>,
    pub template: Template,
    pub target_label: usize,
    /// Loss per generation step (TR), per epoch (VMI, Gumbel) or of the
    /// final text (VTG).
    pub loss_trace: Vec<f64>,
    /// TR only: loss before the perturbation at each step.
    #[serde(default)]
    pub pre_loss_trace: Vec<f64>,
    pub method: Method,
}

impl InvertedText {
    pub fn final_loss(&self) -> f64 {
        self.loss_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// Classifier loss of a finished text.
pub fn text_loss(classifier: &ClassifierModel, tokens: &[TokenId], target: usize, kind: LossKind) -> Result<f64> {
    let p: Vec<f64> = classifier.predict(tokens)?.into_iter().map(f64::from).collect();
    Ok(attack_loss(kind, &p, target))
}

fn check_finite(trace: &[f64], step_offset: usize) -> Result<()> {
    match trace.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Numerical {
            step: step_offset + i,
            what: "non-finite loss".into(),
        }),
        None => Ok(()),
    }
}

/// `method \t target_label \t final_loss \t template \t text`, preceded by a
/// stamp comment line.
pub fn write_inverted_tsv(path: &Path, texts: &[InvertedText], vocab: &Vocab, stamp: &Stamp) -> Result<()> {
    let mut out = format!("# {}\n", stamp.header());
    for t in texts {
        writeln!(
            out,
            "{}\t{}\t{:.6}\t{}\t{}",
            t.method.tag(),
            t.target_label,
            t.final_loss(),
            vocab.decode(&t.template.tokens),
            vocab.decode(&t.tokens)
        )
        .expect("write to string");
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`write_inverted_tsv`]. Loss traces keep only the
/// final loss.
pub fn read_inverted_tsv(path: &Path, vocab: &Vocab, expected: Option<&Stamp>) -> Result<Vec<InvertedText>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(header) = line.strip_prefix('#') {
            if let Some(exp) = expected {
                let stamp = Stamp::parse_header(header).ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: "unreadable stamp".into(),
                })?;
                stamp.check(exp, path)?;
            }
            continue;
        }
        let parse_err = |reason: &str| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: reason.into(),
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(parse_err("expected 5 tab-separated columns"));
        }
        let method = Method::parse(cols[0]).ok_or_else(|| parse_err("unknown method"))?;
        let target_label = cols[1].parse().map_err(|_| parse_err("bad label"))?;
        let final_loss: f64 = cols[2].parse().map_err(|_| parse_err("bad loss"))?;
        let ids = |s: &str| -> Result<Vec<TokenId>> {
            s.split_whitespace()
                .map(|t| {
                    vocab
                        .id(t)
                        .ok_or_else(|| parse_err(&format!("token {t:?} not in vocabulary")))
                })
                .collect()
        };
        out.push(InvertedText {
            tokens: ids(cols[4])?,
            template: Template::new(ids(cols[3])?, 0),
            target_label,
            loss_trace: vec![final_loss],
            pre_loss_trace: Vec::new(),
            method,
        });
    }
    Ok(out)
}
