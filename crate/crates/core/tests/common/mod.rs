#![allow(dead_code)]

pub mod gradcheck;

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use textinv::attack::{AttackConfig, InvertedText, Method};
use textinv::corpus::{split, Dataset, Example, SplitDataset, Template, TokenId, Vocab};
use textinv::modeling::{
    train_classifier, train_generator, ArchConfig, ClassifierModel, Decoding, GeneratorModel, TrainConfig,
};
use textinv::synth::{marker_corpus, SynthConfig};

/// Small marker world with quickly trained models.
pub struct Toy {
    pub vocab: Vocab,
    pub split: SplitDataset,
    pub generator: GeneratorModel,
    pub classifier: ClassifierModel,
}

/// 600-example marker corpus split 80/20 with the public labels sealed.
pub fn marker_split(seed: u64) -> (Vocab, SplitDataset) {
    let mut vocab = Vocab::new();
    let synth = SynthConfig {
        examples: 600,
        ambiguous_fraction: 0.0,
        background_vocab: 100,
        seed,
    };
    let ds = marker_corpus(&synth, &mut vocab).unwrap();
    let split = split(&ds, 0.8, seed, false).unwrap();
    (vocab, split)
}

pub fn toy_world(seed: u64) -> Toy {
    let (vocab, split) = marker_split(seed);
    let generator = train_generator(&split.public, &vocab, &TrainConfig::new(ArchConfig::small(), 3, seed)).unwrap();
    let classifier = train_classifier(&split.private, &vocab, &TrainConfig::new(ArchConfig::small(), 6, seed)).unwrap();
    Toy {
        vocab,
        split,
        generator,
        classifier,
    }
}

pub fn inverted(tokens: Vec<TokenId>, label: usize) -> InvertedText {
    InvertedText {
        template: Template::new(tokens[..1.min(tokens.len())].to_vec(), 0),
        tokens,
        target_label: label,
        loss_trace: vec![0.0],
        pre_loss_trace: vec![],
        method: Method::Tr,
    }
}

pub fn greedy(cfg: AttackConfig) -> AttackConfig {
    AttackConfig {
        decoding: Decoding::Greedy,
        ..cfg
    }
}

/// Random corpus over `words` content words plus a few stop words.
pub fn random_corpus(rng: &mut ChaCha8Rng, examples: usize, max_len: usize, words: usize) -> (Vocab, Dataset) {
    let mut vocab = Vocab::new();
    let pool: Vec<String> = ["the", "a", "and", "was", ".", ","]
        .iter()
        .map(|s| s.to_string())
        .chain((0..words).map(|i| format!("w{i}")))
        .collect();
    let exs = (0..examples)
        .map(|_| {
            let len = rng.random_range(1..=max_len);
            let toks = (0..len)
                .map(|_| vocab.insert(&pool[rng.random_range(0..pool.len())]))
                .collect();
            Example::new(toks, rng.random_range(0..3))
        })
        .collect();
    let ds = Dataset::new(exs, vec!["a".into(), "b".into(), "c".into()]).unwrap();
    (vocab, ds)
}

// ---- brute-force oracles ----

/// Counts every n-gram by comparing it against every window of every text.
pub fn ngram_oracle(
    texts: &[Vec<TokenId>],
    n_min: usize,
    n_max: usize,
    min_freq: usize,
) -> BTreeSet<(Vec<TokenId>, usize)> {
    let mut out = BTreeSet::new();
    for n in n_min..=n_max {
        let mut seen = BTreeSet::new();
        for t in texts {
            for i in 0..t.len().saturating_sub(n - 1) {
                let g = t[i..i + n].to_vec();
                if !seen.insert(g.clone()) {
                    continue;
                }
                let mut c = 0;
                for u in texts {
                    for j in 0..u.len().saturating_sub(n - 1) {
                        if u[j..j + n] == g[..] {
                            c += 1;
                        }
                    }
                }
                if c >= min_freq {
                    out.insert((g, c));
                }
            }
        }
    }
    out
}

pub fn recovery_oracle(inv: &[Vec<TokenId>], private: &[Vec<TokenId>], vocab: &Vocab) -> f64 {
    let stop = vocab.stopword_ids();
    let punct = vocab.punctuation_ids();
    let keep = |t: &TokenId| !vocab.is_special(*t) && !stop.contains(t) && !punct.contains(t);
    let p: Vec<TokenId> = {
        let mut v: Vec<TokenId> = private.iter().flatten().copied().filter(keep).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let hit = p.iter().filter(|t| inv.iter().any(|x| x.contains(t))).count();
    100.0 * hit as f64 / p.len() as f64
}

/// Fagin et al.'s K^(p) by explicit case analysis over the union, normalized
/// by the distance between two disjoint lists of the same lengths.
pub fn kendall_oracle(a: &[u32], b: &[u32], k: usize, p: f64) -> f64 {
    let a = &a[..k.min(a.len())];
    let b = &b[..k.min(b.len())];
    let mut union: Vec<u32> = a.to_vec();
    for x in b {
        if !union.contains(x) {
            union.push(*x);
        }
    }
    let pos = |l: &[u32], x: u32| l.iter().position(|&y| y == x);
    let mut d = 0.0;
    for i in 0..union.len() {
        for j in i + 1..union.len() {
            let (x, y) = (union[i], union[j]);
            let (ax, ay, bx, by) = (pos(a, x), pos(a, y), pos(b, x), pos(b, y));
            let case = match (ax, ay, bx, by) {
                (Some(ax), Some(ay), Some(bx), Some(by)) => f64::from((ax < ay) != (bx < by)),
                // both in one list, one of them in the other
                (Some(ax), Some(ay), Some(_), None) => f64::from(ay < ax),
                (Some(ax), Some(ay), None, Some(_)) => f64::from(ax < ay),
                (Some(_), None, Some(bx), Some(by)) => f64::from(by < bx),
                (None, Some(_), Some(bx), Some(by)) => f64::from(bx < by),
                // x only in a, y only in b (or vice versa)
                (Some(_), None, None, Some(_)) | (None, Some(_), Some(_), None) => 1.0,
                // both in exactly one list
                (Some(_), Some(_), None, None) | (None, None, Some(_), Some(_)) => p,
                _ => unreachable!("every union item is in some list"),
            };
            d += case;
        }
    }
    let (la, lb) = (a.len() as f64, b.len() as f64);
    let max = la * lb + p * (la * (la - 1.0) / 2.0 + lb * (lb - 1.0) / 2.0);
    1.0 - d / max
}

/// Memoized recursive LCS.
pub fn lcs_oracle(a: &[TokenId], b: &[TokenId]) -> usize {
    fn go(a: &[TokenId], b: &[TokenId], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix; returns
/// (eigenvalues, eigenvectors as columns).
pub fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let vals = (0..n).map(|i| a[i][i]).collect();
    let vecs = (0..n).map(|j| (0..n).map(|i| v[i][j]).collect()).collect();
    (vals, vecs)
}

/// PCA of mean embedding rows via the Jacobi oracle, with the same sign rule.
pub fn pca_oracle(texts: &[Vec<TokenId>], classifier: &ClassifierModel, dim: usize) -> Vec<Vec<f64>> {
    let table = classifier.embedding_table();
    let d = table.cols();
    let x: Vec<Vec<f64>> = texts
        .iter()
        .map(|t| {
            let mut row = vec![0.0; d];
            for &id in t {
                for (c, r) in row.iter_mut().enumerate() {
                    *r += table.get(id, c) as f64;
                }
            }
            row.iter().map(|v| v / t.len() as f64).collect()
        })
        .collect();
    let n = x.len();
    let mean: Vec<f64> = (0..d).map(|c| x.iter().map(|r| r[c]).sum::<f64>() / n as f64).collect();
    let xc: Vec<Vec<f64>> = x
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(a, m)| a - m).collect())
        .collect();
    let cov: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| xc.iter().map(|r| r[i] * r[j]).sum::<f64>() / (n as f64 - 1.0))
                .collect()
        })
        .collect();
    let (vals, vecs) = jacobi_eigen(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    let axes: Vec<Vec<f64>> = order[..dim]
        .iter()
        .map(|&j| {
            let v = &vecs[j];
            let pivot = v
                .iter()
                .copied()
                .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if pivot < 0.0 {
                v.iter().map(|x| -x).collect()
            } else {
                v.clone()
            }
        })
        .collect();
    xc.iter()
        .map(|r| {
            axes.iter()
                .map(|ax| r.iter().zip(ax).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
