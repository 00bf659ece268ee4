//! The staged pipeline: data, models, templates, attacks, metrics.
//!
//! Each stage is a plain function so callers can run the stages they need
//! in memory; [`pipeline_run`] wires them together and persists every
//! artifact under the run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::artifact::{read_json, write_json, Stamp};
use crate::attack::{
    item_seed, run_attack_suite, write_inverted_tsv, AttackConfig, AttackModels, ItemFailure, LossKind, Method,
    SuiteOutput,
};
use crate::corpus::templates::write_templates;
use crate::corpus::vocab::{default_adjectives, read_word_list};
use crate::corpus::{
    extract_templates, load_dataset, permute_adjectives, split, truncate_template, Dataset, SplitDataset, Template,
    Vocab,
};
use crate::error::{Error, Result};
use crate::eval::{
    memorization_gap, pca_project, train_eval_classifier, Evaluator, MemorizationGap, MetricsReport, ReportMeta,
};
use crate::modeling::checkpoint::{load_classifier, load_generator, save_classifier, save_generator};
use crate::modeling::{train_classifier, train_generator, ClassifierModel, GeneratorModel};
use crate::synth::{generic_corpus, insert_generic_words, marker_corpus};

use super::config::{DatasetSource, ExperimentConfig, GeneratorCorpus};
use super::plot;

/// Attaches the stage name to an error.
pub fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage {
            stage: name,
            source: Box::new(e),
        },
    })
}

/// Seed for one named stage, derived from the master seed.
pub fn stage_seed(master: u64, stage: usize) -> u64 {
    item_seed(master, usize::MAX - stage, 0)
}

const TARGET_SEED: usize = 0;
const GENERATOR_SEED: usize = 1;
const EVAL_SEED: usize = 2;
const UNTRAINED_SEED: usize = 3;
const GENERIC_SEED: usize = 4;

pub struct Prepared {
    pub vocab: Vocab,
    pub split: SplitDataset,
    /// Training corpus of a generic generator, when configured.
    pub generic: Option<Dataset>,
    pub dataset_hash: String,
}

/// SHA-256 over the vocabulary and every (label, tokens) pair.
pub fn dataset_hash(dataset: &Dataset, vocab: &Vocab) -> String {
    let mut h = Sha256::new();
    h.update(vocab.hash().as_bytes());
    for ex in &dataset.examples {
        h.update(ex.label_or_sentinel().to_le_bytes());
        for &t in &ex.tokens {
            h.update((t as u64).to_le_bytes());
        }
        h.update([0xff]);
    }
    hex::encode(h.finalize())
}

/// Loads or generates the corpus and splits it. Generic-corpus words are
/// always in the vocabulary so every generator shares it.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let (mut vocab, dataset) = match &cfg.dataset {
        DatasetSource::Synthetic(s) => {
            let mut v = Vocab::new();
            let ds = marker_corpus(s, &mut v)?;
            (v, ds)
        }
        DatasetSource::File {
            path,
            labels,
            stopwords,
        } => {
            let mut v = match stopwords {
                Some(p) => Vocab::with_stopwords(read_word_list(p)?),
                None => Vocab::new(),
            };
            let ds = load_dataset(path, labels, &mut v)?;
            (v, ds)
        }
    };
    insert_generic_words(&mut vocab);
    let generic = match cfg.generator_corpus {
        GeneratorCorpus::Public => None,
        GeneratorCorpus::Generic { examples } => Some(generic_corpus(
            examples,
            stage_seed(cfg.seed, GENERIC_SEED),
            &mut vocab,
        )?),
    };
    let split = split(&dataset, cfg.public_ratio, cfg.seed, false)?;
    Ok(Prepared {
        dataset_hash: dataset_hash(&dataset, &vocab),
        vocab,
        split,
        generic,
    })
}

pub fn train_target(cfg: &ExperimentConfig, prep: &Prepared) -> Result<ClassifierModel> {
    let tc = cfg.target.train_config(stage_seed(cfg.seed, TARGET_SEED));
    train_classifier(&prep.split.private, &prep.vocab, &tc)
}

pub fn train_attack_generator(cfg: &ExperimentConfig, prep: &Prepared) -> Result<GeneratorModel> {
    let corpus = prep.generic.as_ref().unwrap_or(&prep.split.public);
    let tc = cfg.generator.train_config(stage_seed(cfg.seed, GENERATOR_SEED));
    train_generator(corpus, &prep.vocab, &tc)
}

pub fn train_evaluator(cfg: &ExperimentConfig, prep: &Prepared) -> Result<ClassifierModel> {
    let tc = cfg.eval.classifier.train_config(stage_seed(cfg.seed, EVAL_SEED));
    train_eval_classifier(&prep.split.private, &prep.vocab, &tc, cfg.eval.acc_threshold)
}

/// Mined templates, most frequent first, after the optional adjective
/// permutation, the count cap and truncation to `fraction`.
pub fn build_templates(cfg: &ExperimentConfig, prep: &Prepared, fraction: f64) -> Result<Vec<Template>> {
    let t = &cfg.templates;
    let mut out = extract_templates(&prep.split.public, &prep.vocab, t.n_min, t.n_max, t.min_freq)?;
    if t.permute_adjectives {
        let short = extract_templates(&prep.split.public, &prep.vocab, 1, 3, t.min_freq)?;
        let limit = if t.max_templates == 0 {
            usize::MAX
        } else {
            t.max_templates
        };
        out = permute_adjectives(&short, &prep.vocab, &default_adjectives(), limit);
    }
    if t.max_templates > 0 {
        out.truncate(t.max_templates);
    }
    if out.is_empty() {
        return Err(Error::Invalid("no template reaches the minimum frequency".into()));
    }
    out.iter().map(|tpl| truncate_template(tpl, fraction)).collect()
}

/// The attack configuration for `method`, with `max_len` resolved.
pub fn attack_config(cfg: &ExperimentConfig, prep: &Prepared, method: Method) -> AttackConfig {
    let max_len = match cfg.attack.max_len {
        0 => prep.split.private.avg_len().max(1),
        n => n,
    };
    AttackConfig {
        method,
        max_len,
        seed: cfg.seed,
        ..cfg.attack.clone()
    }
}

pub struct Models {
    pub target: ClassifierModel,
    pub generator: GeneratorModel,
    pub eval: ClassifierModel,
}

pub fn train_models(cfg: &ExperimentConfig, prep: &Prepared) -> Result<Models> {
    Ok(Models {
        target: stage("train-target", train_target(cfg, prep))?,
        generator: stage("train-generator", train_attack_generator(cfg, prep))?,
        eval: stage("train-eval", train_evaluator(cfg, prep))?,
    })
}

pub fn attack_suite(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    generator: &GeneratorModel,
    target: &ClassifierModel,
    templates: &[Template],
    method: Method,
) -> Result<SuiteOutput> {
    let models = AttackModels {
        generator,
        classifier: target,
        labeled_public: Some(prep.split.sealed_public()),
        vocab: &prep.vocab,
    };
    run_attack_suite(&models, templates, &attack_config(cfg, prep, method))
}

pub fn report(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    models: &Models,
    method: Method,
    out: &SuiteOutput,
) -> Result<MetricsReport> {
    let evaluator = Evaluator {
        private: &prep.split.private,
        vocab: &prep.vocab,
        eval_classifier: &models.eval,
        reference_lm: &models.generator,
        window: cfg.eval.fluency_window,
    };
    let meta = ReportMeta {
        loss: cfg.attack.loss_kind,
        model_size: cfg.target.size.tag().to_string(),
        n_failures: out.failures.len(),
        config_hash: cfg.hash(),
        dataset_hash: prep.dataset_hash.clone(),
        seed: cfg.seed,
    };
    evaluator.report(method, &out.texts, meta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemorizationReport {
    pub trained: MemorizationGap,
    /// Same architecture, freshly initialized.
    pub untrained: MemorizationGap,
}

pub fn memorization(cfg: &ExperimentConfig, prep: &Prepared, target: &ClassifierModel) -> Result<MemorizationReport> {
    let fresh = ClassifierModel::new(
        target.arch.clone(),
        &prep.vocab,
        target.num_classes,
        stage_seed(cfg.seed, UNTRAINED_SEED),
    )?;
    Ok(MemorizationReport {
        trained: memorization_gap(target, &prep.split)?,
        untrained: memorization_gap(&fresh, &prep.split)?,
    })
}

/// File layout of one run.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        RunDir { root: cfg.run_dir() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{name}.json"))
    }
    pub fn templates(&self) -> PathBuf {
        self.root.join("templates.tsv")
    }
    pub fn inverted(&self, stem: &str) -> PathBuf {
        self.root.join("inverted").join(format!("{stem}.tsv"))
    }
    pub fn failures(&self, stem: &str) -> PathBuf {
        self.root.join("inverted").join(format!("{stem}.failures.json"))
    }
    pub fn report(&self, stem: &str) -> PathBuf {
        self.root.join("reports").join(format!("{stem}.json"))
    }
    pub fn pca(&self, stem: &str, ext: &str) -> PathBuf {
        self.root.join("pca").join(format!("{stem}.{ext}"))
    }
    pub fn table(&self, ext: &str) -> PathBuf {
        self.root.join(format!("table.{ext}"))
    }
    pub fn ablation(&self) -> PathBuf {
        self.root.join("ablation.csv")
    }
    pub fn data(&self, name: &str) -> PathBuf {
        self.root.join("data").join(format!("{name}.tsv"))
    }

    /// Report files present, sorted by name.
    pub fn report_paths(&self) -> Result<Vec<PathBuf>> {
        let dir = self.root.join("reports");
        let mut out = Vec::new();
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(Error::io(&dir, e)),
        };
        for entry in entries {
            let p = entry.map_err(|e| Error::io(&dir, e))?.path();
            let is_method = p
                .file_stem()
                .and_then(|s| s.to_str())
                .is_some_and(|s| s != "memorization" && s != "ablation");
            if is_method && p.extension().is_some_and(|e| e == "json") {
                out.push(p);
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn lock(&self) -> Result<RunLock> {
        fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let path = self.root.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "{} is locked by another run; delete {} if that run is gone",
                self.root.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

/// Removes the lockfile when dropped.
#[derive(Debug)]
pub struct RunLock(PathBuf);

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Name of a method's artifacts: the method tag, suffixed by the loss when
/// it is not cross-entropy.
pub fn artifact_stem(method: Method, loss: LossKind) -> String {
    match loss {
        LossKind::CrossEntropy => method.tag().to_string(),
        other => format!("{}-{}", method.tag(), other.tag()),
    }
}

pub fn stamp(cfg: &ExperimentConfig) -> Stamp {
    Stamp::new(cfg.hash(), cfg.seed)
}

/// Loads the target checkpoint, training and saving it first if absent.
pub fn load_or_train_target(cfg: &ExperimentConfig, prep: &Prepared, dir: &RunDir) -> Result<ClassifierModel> {
    let path = dir.checkpoint("target");
    if path.exists() {
        return load_classifier(&path, &prep.vocab, &stamp(cfg));
    }
    let m = stage("train-target", train_target(cfg, prep))?;
    save_classifier(&path, &m, &stamp(cfg))?;
    Ok(m)
}

pub fn load_or_train_generator(cfg: &ExperimentConfig, prep: &Prepared, dir: &RunDir) -> Result<GeneratorModel> {
    let path = dir.checkpoint("generator");
    if path.exists() {
        return load_generator(&path, &prep.vocab, &stamp(cfg));
    }
    let m = stage("train-generator", train_attack_generator(cfg, prep))?;
    save_generator(&path, &m, &stamp(cfg))?;
    Ok(m)
}

pub fn load_or_train_eval(cfg: &ExperimentConfig, prep: &Prepared, dir: &RunDir) -> Result<ClassifierModel> {
    let path = dir.checkpoint("eval");
    if path.exists() {
        return load_classifier(&path, &prep.vocab, &stamp(cfg));
    }
    let m = stage("train-eval", train_evaluator(cfg, prep))?;
    save_classifier(&path, &m, &stamp(cfg))?;
    Ok(m)
}

pub fn load_or_train_models(cfg: &ExperimentConfig, prep: &Prepared, dir: &RunDir) -> Result<Models> {
    Ok(Models {
        target: load_or_train_target(cfg, prep, dir)?,
        generator: load_or_train_generator(cfg, prep, dir)?,
        eval: load_or_train_eval(cfg, prep, dir)?,
    })
}

/// Writes the config, the split and the vocabulary.
pub fn persist_prepared(cfg: &ExperimentConfig, prep: &Prepared, dir: &RunDir) -> Result<()> {
    fs::create_dir_all(dir.root.join("data")).map_err(|e| Error::io(&dir.root, e))?;
    write_json(&dir.config(), &stamp(cfg), cfg)?;
    prep.split.public.save(&dir.data("public"), &prep.vocab)?;
    prep.split.private.save(&dir.data("private"), &prep.vocab)?;
    prep.vocab.save(&dir.root.join("vocab.txt"))
}

pub fn persist_templates(cfg: &ExperimentConfig, templates: &[Template], vocab: &Vocab, dir: &RunDir) -> Result<()> {
    write_templates(&dir.templates(), templates, vocab, Some(&stamp(cfg).header()))
}

/// PCA of private texts and one method's inverted texts under the target's
/// embedding table: `group,x,y,label` for two components, `pc<k>` columns
/// otherwise.
pub fn write_pca(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    target: &ClassifierModel,
    out: &SuiteOutput,
    path: &Path,
    svg: Option<&Path>,
) -> Result<()> {
    let private = &prep.split.private.examples;
    let mut texts: Vec<Vec<usize>> = private.iter().map(|e| e.tokens.clone()).collect();
    let mut rows: Vec<(&str, usize)> = private.iter().map(|e| ("ground_truth", e.label.unwrap_or(0))).collect();
    for t in out.texts.iter().filter(|t| !t.tokens.is_empty()) {
        texts.push(t.tokens.clone());
        rows.push(("inverted", t.target_label));
    }
    let dim = cfg.eval.pca_dim;
    let proj = pca_project(&texts, target, dim)?;
    let mut csv = format!("# {}\ngroup", stamp(cfg).header());
    if dim == 2 {
        csv.push_str(",x,y");
    } else {
        for k in 0..dim {
            write!(csv, ",pc{}", k + 1).expect("write to string");
        }
    }
    csv.push_str(",label\n");
    for ((group, label), p) in rows.iter().zip(&proj) {
        csv.push_str(group);
        for x in p {
            write!(csv, ",{x:.9}").expect("write to string");
        }
        writeln!(csv, ",{label}").expect("write to string");
    }
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    fs::write(path, csv).map_err(|e| Error::io(path, e))?;
    if let Some(svg) = svg {
        if cfg.eval.pca_dim >= 2 {
            let points: Vec<(bool, f64, f64)> = rows
                .iter()
                .zip(&proj)
                .map(|((group, _), p)| (*group == "inverted", p[0], p[1]))
                .collect();
            plot::scatter_svg(svg, &points)?;
        }
    }
    Ok(())
}

/// Runs one method end to end on trained models and persists its texts,
/// failures, report and PCA projection.
#[allow(clippy::too_many_arguments)]
pub fn run_method(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    models: &Models,
    templates: &[Template],
    method: Method,
    dir: &RunDir,
) -> Result<(SuiteOutput, MetricsReport)> {
    let out = stage(
        "attack",
        attack_suite(cfg, prep, &models.generator, &models.target, templates, method),
    )?;
    let stem = artifact_stem(method, cfg.attack.loss_kind);
    let st = stamp(cfg);
    write_inverted_tsv(&dir.inverted(&stem), &out.texts, &prep.vocab, &st)?;
    write_json(&dir.failures(&stem), &st, &out.failures)?;
    let rep = stage("evaluate", report(cfg, prep, models, method, &out))?;
    write_json(&dir.report(&stem), &st, &rep)?;
    let svg = cfg.plots.then(|| dir.pca(&stem, "svg"));
    stage(
        "pca",
        write_pca(cfg, prep, &models.target, &out, &dir.pca(&stem, "csv"), svg.as_deref()),
    )?;
    Ok((out, rep))
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub reports: Vec<MetricsReport>,
    pub failures: Vec<(Method, ItemFailure)>,
    pub memorization: MemorizationReport,
}

/// load → split → templates → generator → target → attacks → metrics, with
/// every artifact written under the run directory.
pub fn pipeline_run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let dir = RunDir::new(cfg);
    let _lock = dir.lock()?;
    let prep = stage("prepare", prepare(cfg))?;
    persist_prepared(cfg, &prep, &dir)?;
    let templates = stage("extract-templates", build_templates(cfg, &prep, cfg.templates.fraction))?;
    persist_templates(cfg, &templates, &prep.vocab, &dir)?;
    let models = load_or_train_models(cfg, &prep, &dir)?;
    let mem = stage("memorization", memorization(cfg, &prep, &models.target))?;
    write_json(&dir.report("memorization"), &stamp(cfg), &mem)?;

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for &method in &cfg.methods {
        let (out, rep) = run_method(cfg, &prep, &models, &templates, method, &dir)?;
        failures.extend(out.failures.into_iter().map(|f| (method, f)));
        reports.push(rep);
    }
    let table = super::table::compare_table(&reports);
    table.write(&dir.table("csv"), &dir.table("txt"))?;
    Ok(RunOutput {
        dir: dir.root,
        reports,
        failures,
        memorization: mem,
    })
}

/// Reads every method report of a run, checking their stamps.
pub fn read_reports(cfg: &ExperimentConfig, dir: &RunDir) -> Result<Vec<MetricsReport>> {
    dir.report_paths()?.iter().map(|p| read_json(p, &stamp(cfg))).collect()
}
