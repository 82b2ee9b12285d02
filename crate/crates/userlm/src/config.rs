//! Run configuration: one TOML file of key = value sections covering every
//! component, cross-validated before any work starts. Unknown keys are
//! rejected everywhere (anti-typo), and every field has a default, so an
//! empty file is a valid desk-scale run.

use crate::data::split::DEFAULT_FRACTIONS;
use crate::data::synth::SynthConfig;
use crate::embedder::EmbedderConfig;
use crate::eval::LabelSpace;
use crate::lm::LmConfig;
use crate::train::AdamConfig;
use crate::uem::UemConfig;
use std::path::{Path, PathBuf};

#[derive(Debug, PartialEq)]
pub enum ConfigError {
    Io { path: String, msg: String },
    Parse { msg: String },
    /// A field (or combination of fields) fails validation.
    Invalid { field: String, msg: String },
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Io { path, msg } => write!(f, "config io {path}: {msg}"),
            ConfigError::Parse { msg } => write!(f, "config parse error: {msg}"),
            ConfigError::Invalid { field, msg } => write!(f, "config field {field}: {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

fn invalid(field: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), msg: msg.into() }
}

/// How user histories reach the language model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Histories are compressed into soft-prompt rows by the module.
    Embedding,
    /// Histories are rendered as text inside the query.
    Text,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Embedding => "embedding",
            Mode::Text => "text",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "embedding" => Ok(Mode::Embedding),
            "text" => Ok(Mode::Text),
            other => Err(format!("unknown mode {other:?} (expected embedding|text)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Run name; artifacts land under `<output_dir>/<name>/`.
    pub name: String,
    pub output_dir: PathBuf,
    /// Master seed: parameter init, batch sampling, and the synthetic
    /// generator all derive their streams from it unless overridden.
    pub seed: u64,
    pub mode: Mode,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            name: "run".into(),
            output_dir: PathBuf::from("runs"),
            seed: 42,
            mode: Mode::Embedding,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Directory holding (or receiving) the genre file and data shards.
    pub dir: PathBuf,
    /// Source CSVs for `ingest`; unused by synthetic data.
    pub ratings: Option<PathBuf>,
    pub movies: Option<PathBuf>,
    pub descriptions: Option<PathBuf>,
    /// Users with fewer history items than this are dropped.
    pub min_views: usize,
    /// Token-vocabulary size cap (specials excluded); the vocabulary is
    /// built from the training split and saved with the run.
    pub vocab_cap: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            dir: PathBuf::from("data"),
            ratings: None,
            movies: None,
            descriptions: None,
            min_views: 5,
            vocab_cap: 8192,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Single constant learning rate per run, default 1e-3. Full-scale
    /// reference points: 5e-3 for embedding mode, 1e-2 for text mode; at
    /// desk scale those rates train the model into an unconditional fit
    /// that ignores the history rows, so the default stays lower.
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    pub batch_size: usize,
    /// History length: most recent items kept per user.
    pub p: usize,
    /// Evaluate on the dev split every this many steps (0 = only at end).
    pub eval_every: u64,
    /// Write a checkpoint every this many steps (0 = only at end).
    pub checkpoint_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainSection {
            lr: 1e-3,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            steps: 500,
            batch_size: 8,
            p: 16,
            eval_every: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainSection {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Which binary labels are scored: both polarities (38 labels for the
    /// 19-genre pipeline) or liked-only (19).
    pub label_space: LabelSpaceName,
    /// Decode worker threads; results are thread-count invariant.
    pub threads: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { label_space: LabelSpaceName::Both, threads: 2 }
    }
}

/// Serializable name for [`LabelSpace`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSpaceName {
    Both,
    LikedOnly,
}

impl From<LabelSpaceName> for LabelSpace {
    fn from(n: LabelSpaceName) -> LabelSpace {
        match n {
            LabelSpaceName::Both => LabelSpace::Both,
            LabelSpaceName::LikedOnly => LabelSpace::LikedOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    /// Train/dev/test fractions; must sum to 1.
    pub fractions: [f64; 3],
    /// Salt mixed into the user-hash assignment.
    pub salt: String,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { fractions: DEFAULT_FRACTIONS, salt: "v1".into() }
    }
}

/// The whole run configuration. Every section is optional in the file;
/// omitted sections take desk-scale defaults.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub synth: SynthConfig,
    pub embedder: EmbedderConfig,
    pub uem: UemConfig,
    pub lm: LmConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub split: SplitSection,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<RunConfig, ConfigError> {
        let cfg: RunConfig =
            toml::from_str(s).map_err(|e| ConfigError::Parse { msg: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config always serializes")
    }

    /// Every component's own checks plus the cross-component couplings.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.embedder
            .validate()
            .map_err(|e| invalid("embedder", e.to_string()))?;
        self.uem.validate().map_err(|e| invalid("uem", e.to_string()))?;
        self.lm.validate().map_err(|e| invalid("lm", e.to_string()))?;
        self.synth.validate().map_err(|e| invalid("synth", e.to_string()))?;

        if self.embedder.s != self.uem.s {
            return Err(invalid(
                "embedder.s",
                format!("is {}, but uem.s is {} (item rows feed the module)", self.embedder.s, self.uem.s),
            ));
        }
        if self.uem.e != self.lm.e {
            return Err(invalid(
                "uem.e",
                format!("is {}, but lm.e is {} (module output feeds the model)", self.uem.e, self.lm.e),
            ));
        }
        if self.train.p > self.uem.max_p {
            return Err(invalid(
                "train.p",
                format!("is {}, above uem.max_p {}", self.train.p, self.uem.max_p),
            ));
        }
        if self.lm.max_history_rows < self.uem.max_p {
            return Err(invalid(
                "lm.max_history_rows",
                format!(
                    "is {}, below uem.max_p {} (encoder positions must cover any history)",
                    self.lm.max_history_rows, self.uem.max_p
                ),
            ));
        }
        if !(self.train.lr.is_finite() && self.train.lr > 0.0) {
            return Err(invalid("train.lr", format!("must be positive and finite, got {}", self.train.lr)));
        }
        if self.run.seed > i64::MAX as u64 {
            // TOML integers are signed 64-bit, so a larger seed could never
            // round-trip through the config snapshot written into a run dir.
            return Err(invalid(
                "run.seed",
                format!("is {}, above the largest value a config file can store ({})", self.run.seed, i64::MAX),
            ));
        }
        if self.train.batch_size == 0 {
            return Err(invalid("train.batch_size", "must be at least 1"));
        }
        if self.train.steps == 0 {
            return Err(invalid("train.steps", "must be at least 1"));
        }
        if self.eval.threads == 0 {
            return Err(invalid("eval.threads", "must be at least 1"));
        }
        if self.data.vocab_cap == 0 {
            return Err(invalid("data.vocab_cap", "must be at least 1"));
        }
        for (i, f) in self.split.fractions.iter().enumerate() {
            if !(f.is_finite() && (0.0..=1.0).contains(f)) {
                return Err(invalid("split.fractions", format!("element {i} is {f}, outside [0, 1]")));
            }
        }
        let sum: f64 = self.split.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(invalid("split.fractions", format!("sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// Read, parse, and validate a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.display().to_string(), msg: e.to_string() })?;
    RunConfig::from_toml_str(&text)
}

/// Command-line overrides applied on top of the loaded file, then
/// re-validated.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub name: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub p: Option<usize>,
    pub steps: Option<u64>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), ConfigError> {
        if let Some(v) = &self.name {
            cfg.run.name = v.clone();
        }
        if let Some(v) = &self.output_dir {
            cfg.run.output_dir = v.clone();
        }
        if let Some(v) = &self.data_dir {
            cfg.data.dir = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.run.seed = v;
        }
        if let Some(v) = self.mode {
            cfg.run.mode = v;
        }
        if let Some(v) = self.p {
            cfg.train.p = v;
        }
        if let Some(v) = self.steps {
            cfg.train.steps = v;
        }
        if let Some(v) = self.lr {
            cfg.train.lr = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        cfg.validate()
    }
}
