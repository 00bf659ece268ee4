//! N-gram template mining over the public corpus.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::vocab::{TokenId, Vocab};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub tokens: Vec<TokenId>,
    pub frequency: usize,
    pub inferred_label: Option<usize>,
}

impl Template {
    pub fn new(tokens: Vec<TokenId>, frequency: usize) -> Self {
        assert!(!tokens.is_empty(), "templates are nonempty");
        Template {
            tokens,
            frequency,
            inferred_label: None,
        }
    }

    pub fn n(&self) -> usize {
        self.tokens.len()
    }
}

/// Overlapping occurrences of `needle` in `hay`.
pub fn count_occurrences(hay: &[TokenId], needle: &[TokenId]) -> usize {
    if needle.is_empty() || needle.len() > hay.len() {
        return 0;
    }
    hay.windows(needle.len()).filter(|w| *w == needle).count()
}

fn lexicographic(vocab: &Vocab, a: &[TokenId], b: &[TokenId]) -> Ordering {
    a.iter().map(|&t| vocab.token(t)).cmp(b.iter().map(|&t| vocab.token(t)))
}

/// Sort order shared by every template list: frequency descending, then
/// length descending, then token strings ascending.
pub fn sort_templates(templates: &mut [Template], vocab: &Vocab) {
    templates.sort_by(|a, b| {
        b.frequency
            .cmp(&a.frequency)
            .then(b.n().cmp(&a.n()))
            .then_with(|| lexicographic(vocab, &a.tokens, &b.tokens))
    });
}

/// Every contiguous n-gram with `n_min <= n <= n_max` occurring at least
/// `min_freq` times across the corpus (overlapping occurrences counted).
pub fn extract_templates(
    public: &Dataset,
    vocab: &Vocab,
    n_min: usize,
    n_max: usize,
    min_freq: usize,
) -> Result<Vec<Template>> {
    if n_min == 0 || n_min > n_max {
        return Err(Error::Invalid(format!("bad n-gram range {n_min}..={n_max}")));
    }
    if min_freq == 0 {
        return Err(Error::Invalid("min_freq must be at least 1".into()));
    }
    let mut counts: HashMap<&[TokenId], usize> = HashMap::new();
    for text in public.texts() {
        for n in n_min..=n_max.min(text.len()) {
            for gram in text.windows(n) {
                *counts.entry(gram).or_insert(0) += 1;
            }
        }
    }
    let mut out: Vec<Template> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_freq)
        .map(|(g, c)| Template::new(g.to_vec(), c))
        .collect();
    sort_templates(&mut out, vocab);
    Ok(out)
}

/// Keeps the first `max(1, floor(fraction * L))` tokens.
pub fn truncate_template(template: &Template, fraction: f64) -> Result<Template> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Invalid(format!(
            "truncation fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let len = template.n();
    // the epsilon absorbs products like 0.7 * 30 = 20.999999999999996
    let keep = ((fraction * len as f64 + 1e-9).floor() as usize).clamp(1, len);
    Ok(Template {
        tokens: template.tokens[..keep].to_vec(),
        frequency: template.frequency,
        inferred_label: template.inferred_label,
    })
}

/// Appends each frequent one-word adjective to each 2-3 word phrase,
/// e.g. "feel like" + "glad". The combined frequency is the smaller of the
/// two parts. At most `limit` templates are returned, in input order.
pub fn permute_adjectives(
    templates: &[Template],
    vocab: &Vocab,
    adjectives: &BTreeSet<String>,
    limit: usize,
) -> Vec<Template> {
    let adj: Vec<&Template> = templates
        .iter()
        .filter(|t| t.n() == 1 && adjectives.contains(vocab.token(t.tokens[0])))
        .collect();
    let phrases: Vec<&Template> = templates
        .iter()
        .filter(|t| (2..=3).contains(&t.n()))
        .filter(|t| !t.tokens.iter().any(|&id| adjectives.contains(vocab.token(id))))
        .collect();
    let mut out = Vec::new();
    'outer: for p in &phrases {
        for a in &adj {
            if out.len() >= limit {
                break 'outer;
            }
            let mut tokens = p.tokens.clone();
            tokens.push(a.tokens[0]);
            out.push(Template::new(tokens, p.frequency.min(a.frequency)));
        }
    }
    out
}

/// The label under which the template occurs most often in labeled public
/// texts; ties go to the smallest label.
pub fn infer_template_label(template: &Template, labeled_public: &Dataset, vocab: &Vocab) -> Result<usize> {
    let mut counts = vec![0usize; labeled_public.num_classes];
    for ex in &labeled_public.examples {
        let label = ex
            .label
            .ok_or_else(|| Error::Invalid("label inference needs the labeled public dataset".into()))?;
        counts[label] += count_occurrences(&ex.tokens, &template.tokens);
    }
    let best = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, &c)| (i, c));
    match best {
        Some((label, c)) if c > 0 => Ok(label),
        _ => Err(Error::UnusableTemplate(vocab.decode(&template.tokens))),
    }
}

/// `<frequency>\t<space-joined tokens>` per line.
pub fn write_templates(path: &Path, templates: &[Template], vocab: &Vocab, header: Option<&str>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    if let Some(h) = header {
        writeln!(f, "# {h}").map_err(|e| Error::io(path, e))?;
    }
    for t in templates {
        writeln!(f, "{}\t{}", t.frequency, vocab.decode(&t.tokens)).map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

/// Reads a template file; `#` lines are ignored and every token must already
/// be in the vocabulary.
pub fn read_templates(path: &Path, vocab: &Vocab) -> Result<Vec<Template>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let (freq, body) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected <frequency>\\t<tokens>".into()))?;
        let frequency = freq
            .trim()
            .parse::<usize>()
            .map_err(|e| bad(format!("bad frequency: {e}")))?;
        let tokens = body
            .split(' ')
            .filter(|t| !t.is_empty())
            .map(|t| vocab.id(t).ok_or_else(|| bad(format!("token {t:?} not in vocabulary"))))
            .collect::<Result<Vec<_>>>()?;
        if tokens.is_empty() {
            return Err(bad("empty template".into()));
        }
        out.push(Template::new(tokens, frequency));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::dataset::Example;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn corpus(lines: &[(&str, usize)], n: usize) -> (Dataset, Vocab) {
        let mut v = Vocab::new();
        let ex = lines
            .iter()
            .map(|(t, l)| Example::new(v.encode_extend(t), *l))
            .collect();
        (Dataset::new(ex, (0..n).map(|i| i.to_string()).collect()).unwrap(), v)
    }

    /// Independent oracle: enumerate distinct n-grams, then count each by
    /// scanning every text position.
    fn brute_force(ds: &Dataset, n_min: usize, n_max: usize, min_freq: usize) -> BTreeMap<Vec<TokenId>, usize> {
        let mut distinct = BTreeSet::new();
        for t in ds.texts() {
            for n in n_min..=n_max {
                for s in 0..t.len() {
                    if s + n <= t.len() {
                        distinct.insert(t[s..s + n].to_vec());
                    }
                }
            }
        }
        let mut out = BTreeMap::new();
        for g in distinct {
            let mut c = 0;
            for t in ds.texts() {
                for s in 0..t.len() {
                    if t[s..].starts_with(&g) {
                        c += 1;
                    }
                }
            }
            if c >= min_freq {
                out.insert(g, c);
            }
        }
        out
    }

    #[test]
    fn frequent_phrase_is_found_with_its_count() {
        let mut lines = vec![("if i could give this place zero stars", 0usize); 25];
        lines.push(("the soup was cold", 1));
        let (ds, v) = corpus(&lines, 2);
        let ts = extract_templates(&ds, &v, 4, 4, 20).unwrap();
        let target = v.encode("if i could give");
        let hit = ts.iter().find(|t| t.tokens == target).unwrap();
        assert_eq!(hit.frequency, 25);
        assert!(extract_templates(&ds, &v, 1, 3, 1000).unwrap().is_empty());
    }

    #[test]
    fn ordering_is_freq_then_length_then_lexicographic() {
        let (ds, v) = corpus(&[("b a b a", 0), ("c", 1)], 2);
        let ts = extract_templates(&ds, &v, 1, 2, 1).unwrap();
        let shown: Vec<String> = ts.iter().map(|t| v.decode(&t.tokens)).collect();
        assert_eq!(shown, vec!["b a", "a", "b", "a b", "c"]);
    }

    #[test]
    fn truncation_follows_floor_rule() {
        let mut v = Vocab::new();
        let t = Template::new(v.encode_extend("if i could give this place 0 star"), 30);
        let at = |f| v.decode(&truncate_template(&t, f).unwrap().tokens);
        assert_eq!(at(0.3), "if i");
        assert_eq!(at(0.5), "if i could give");
        assert_eq!(at(0.7), "if i could give this");
        assert_eq!(truncate_template(&t, 1.0).unwrap(), t);
        let one = Template::new(vec![7], 3);
        assert_eq!(truncate_template(&one, 0.3).unwrap().tokens, vec![7]);
        assert!(truncate_template(&t, 0.0).is_err());
    }

    #[test]
    fn label_inference_counts_per_label() {
        let (ds, v) = corpus(
            &[
                ("x y", 0),
                ("x y x y x y", 1),
                ("x y x y", 1),
                ("x y x y", 1),
                ("x y", 2),
                ("q", 0),
                ("x y x y", 0),
            ],
            3,
        );
        let t = Template::new(v.encode("x y"), 1);
        // label 0: 1 + 2 = 3, label 1: 3 + 2 + 2 = 7, label 2: 1
        assert_eq!(infer_template_label(&t, &ds, &v).unwrap(), 1);

        let (ds, v) = corpus(&[("a", 0), ("a", 1), ("b", 2)], 3);
        assert_eq!(
            infer_template_label(&Template::new(v.encode("a"), 1), &ds, &v).unwrap(),
            0
        );
        assert_eq!(
            infer_template_label(&Template::new(v.encode("b"), 1), &ds, &v).unwrap(),
            2
        );
        let missing = Template::new(vec![UNK_FOR_TEST], 1);
        assert!(matches!(
            infer_template_label(&missing, &ds, &v),
            Err(Error::UnusableTemplate(_))
        ));
    }
    const UNK_FOR_TEST: TokenId = crate::corpus::vocab::UNK;

    #[test]
    fn adjective_permutation() {
        let (ds, v) = corpus(&[("feel like glad", 0); 30], 2);
        let ts = extract_templates(&ds, &v, 1, 3, 20).unwrap();
        let adjs: BTreeSet<String> = ["glad".to_string()].into();
        let p = permute_adjectives(&ts, &v, &adjs, 10);
        let shown: Vec<String> = p.iter().map(|t| v.decode(&t.tokens)).collect();
        assert_eq!(shown, vec!["feel like glad"]);
        assert_eq!(p[0].frequency, 30);
    }

    #[test]
    fn template_file_roundtrip() {
        let mut v = Vocab::new();
        let ts = vec![
            Template::new(v.encode_extend("i feel"), 25),
            Template::new(v.encode_extend("so"), 21),
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.tsv");
        write_templates(&p, &ts, &v, Some("stamp")).unwrap();
        assert_eq!(read_templates(&p, &v).unwrap(), ts);
    }

    proptest! {
        #[test]
        fn extraction_matches_brute_force(
            texts in prop::collection::vec(prop::collection::vec(4usize..9, 1..25), 1..40),
            n_min in 1usize..3, extra in 0usize..3, min_freq in 1usize..6,
        ) {
            let ex = texts.into_iter().map(|t| Example::new(t, 0)).collect();
            let ds = Dataset::new(ex, vec!["a".into(), "b".into()]).unwrap();
            let mut v = Vocab::new();
            for i in 4..9 { v.insert(&format!("w{i}")); }
            let got = extract_templates(&ds, &v, n_min, n_min + extra, min_freq).unwrap();
            let got_map: BTreeMap<Vec<TokenId>, usize> = got.iter().map(|t| (t.tokens.clone(), t.frequency)).collect();
            prop_assert_eq!(got_map.len(), got.len());
            prop_assert_eq!(got_map, brute_force(&ds, n_min, n_min + extra, min_freq));
        }

        #[test]
        fn truncation_never_empties(len in 1usize..40, f in 0.001f64..=1.0) {
            let t = Template::new((4..4 + len).collect(), 20);
            let once = truncate_template(&t, f).unwrap();
            prop_assert!(!once.tokens.is_empty());
            prop_assert_eq!(truncate_template(&truncate_template(&t, 1.0).unwrap(), f).unwrap(), once);
        }
    }
}
