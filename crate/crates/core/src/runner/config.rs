use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{AttackConfig, Method};
use crate::corpus::LabelConfig;
use crate::error::{Error, Result};
use crate::modeling::{ArchConfig, TrainConfig};
use crate::synth::SynthConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    /// Generated marker corpus.
    Synthetic(SynthConfig),
    /// `<label>\t<text>` file.
    File {
        path: PathBuf,
        #[serde(default)]
        labels: LabelConfig,
        /// One stop word per line; the bundled list when absent.
        #[serde(default)]
        stopwords: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSize {
    Small,
    Large,
}

impl ModelSize {
    pub fn arch(self) -> ArchConfig {
        match self {
            ModelSize::Small => ArchConfig::small(),
            ModelSize::Large => ArchConfig::large(),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ModelSize::Small => "small",
            ModelSize::Large => "large",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSpec {
    pub size: ModelSize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub weight_decay: f32,
}

impl TrainSpec {
    pub fn new(size: ModelSize, epochs: usize) -> Self {
        let base = TrainConfig::new(size.arch(), epochs, 0);
        TrainSpec {
            size,
            epochs,
            batch_size: base.batch_size,
            learning_rate: base.learning_rate,
            weight_decay: base.weight_decay,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            arch: self.size.arch(),
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            seed,
        }
    }
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec::new(ModelSize::Small, 10)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateSpec {
    pub n_min: usize,
    pub n_max: usize,
    pub min_freq: usize,
    /// Fraction of each template's tokens kept.
    pub fraction: f64,
    /// Most frequent templates kept; 0 keeps all.
    pub max_templates: usize,
    /// Replace mined templates with phrase + adjective combinations.
    pub permute_adjectives: bool,
}

impl Default for TemplateSpec {
    fn default() -> Self {
        TemplateSpec {
            n_min: 3,
            n_max: 8,
            min_freq: 20,
            fraction: 1.0,
            max_templates: 20,
            permute_adjectives: false,
        }
    }
}

/// What the generator is trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorCorpus {
    Public,
    /// News-style sentences sharing no content words with the target data.
    Generic {
        examples: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSpec {
    pub classifier: TrainSpec,
    /// Private accuracy at which evaluation-classifier training stops.
    pub acc_threshold: f64,
    pub fluency_window: usize,
    pub pca_dim: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            classifier: TrainSpec {
                learning_rate: 1e-3,
                ..TrainSpec::new(ModelSize::Large, 15)
            },
            acc_threshold: 0.95,
            fluency_window: 32,
            pca_dim: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    /// Fraction of examples in the public split.
    pub public_ratio: f64,
    pub target: TrainSpec,
    pub generator: TrainSpec,
    pub generator_corpus: GeneratorCorpus,
    pub templates: TemplateSpec,
    pub methods: Vec<Method>,
    /// `max_len` 0 means the private split's average length.
    pub attack: AttackConfig,
    pub eval: EvalSpec,
    /// Also write SVG scatter plots of the PCA projections.
    pub plots: bool,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Run directory name; the config hash prefix when absent.
    pub run_id: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::Synthetic(SynthConfig::default()),
            public_ratio: 0.8,
            target: TrainSpec::new(ModelSize::Small, 10),
            generator: TrainSpec::new(ModelSize::Small, 15),
            generator_corpus: GeneratorCorpus::Public,
            templates: TemplateSpec::default(),
            methods: vec![Method::Tr, Method::Vtg, Method::Vmi],
            attack: AttackConfig {
                max_len: 0,
                ..AttackConfig::calibrated()
            },
            eval: EvalSpec::default(),
            plots: false,
            seed: 0,
            out_dir: PathBuf::from("out"),
            run_id: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Config(what));
        match &self.dataset {
            DatasetSource::File { path, stopwords, .. } => {
                for p in std::iter::once(path).chain(stopwords) {
                    if !p.exists() {
                        return bad(format!("{} does not exist", p.display()));
                    }
                }
            }
            DatasetSource::Synthetic(s) => {
                if s.examples < 10 {
                    return bad("the synthetic corpus needs at least 10 examples".into());
                }
            }
        }
        if !(self.public_ratio > 0.0 && self.public_ratio < 1.0) {
            return bad(format!("public_ratio {} outside (0, 1)", self.public_ratio));
        }
        if self.methods.is_empty() {
            return bad("no attack methods selected".into());
        }
        let t = &self.templates;
        if t.n_min == 0 || t.n_min > t.n_max || t.min_freq == 0 {
            return bad(format!("bad template extraction parameters: {t:?}"));
        }
        if !(t.fraction > 0.0 && t.fraction <= 1.0) {
            return bad(format!("template fraction {} outside (0, 1]", t.fraction));
        }
        if let GeneratorCorpus::Generic { examples: 0 } = self.generator_corpus {
            return bad("the generic corpus needs examples".into());
        }
        if !(self.eval.acc_threshold > 0.0 && self.eval.acc_threshold < 1.0) {
            return bad(format!("accuracy threshold {} outside (0, 1)", self.eval.acc_threshold));
        }
        if self.eval.fluency_window == 0 || self.eval.pca_dim == 0 {
            return bad("fluency window and PCA dimension must be positive".into());
        }
        for spec in [&self.target, &self.generator, &self.eval.classifier] {
            spec.train_config(self.seed).validate()?;
        }
        // max_len 0 is resolved later; validate the rest with a stand-in
        AttackConfig {
            max_len: self.attack.max_len.max(1),
            ..self.attack.clone()
        }
        .validate()
    }

    /// SHA-256 of the canonical JSON form, ignoring where outputs go.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.run_id = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn run_dir(&self) -> PathBuf {
        let id = self.run_id.clone().unwrap_or_else(|| self.hash()[..12].to_string());
        self.out_dir.join(id)
    }
}
