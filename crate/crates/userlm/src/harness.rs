//! Subcommand orchestration: data generation and ingest, training with
//! checkpoints and a metrics log, evaluation, ablation sweeps, the counting
//! baseline, and the cost report.
//!
//! Every run owns `<output_dir>/<name>/` exclusively (lock file) and writes
//! artifacts atomically. The metrics log holds deterministic fields only —
//! rerunning an identical config + seed must reproduce it byte for byte, so
//! wall-clock timing goes to stderr, never into artifacts.

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CkptError};
use crate::config::{ConfigError, Mode, RunConfig};
use crate::cost::{cost_compare, render_cost_report, render_scaling_data, scaling_rows, CostReport};
use crate::data::ingest::{ingest, IngestReport};
use crate::data::labels::{build_preference_labels, filter_min_views};
use crate::data::render::{render_item_text, INSTRUCTION};
use crate::data::shards::{atomic_write, load_split, load_vocab, write_dataset, Split};
use crate::data::split::split_users;
use crate::data::synth::synth_generate;
use crate::data::{DataError, UserHistory};
use crate::embedder::EmbedError;
use crate::eval::{
    evaluate_counting_baseline, evaluate_model, golds_of, EvalError, EvalReport, RunMeta,
};
use crate::layers::ParamSet;
use crate::lm::vocab::Vocab;
use crate::lm::LmModel;
use crate::rng::RngState;
use crate::tensor::TensorError;
use crate::train::{
    prepare_embedding_examples, prepare_text_examples, PreparedExample, TrainError, Trainer,
};
use crate::uem::UemModel;
use std::io::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub enum HarnessError {
    Config(ConfigError),
    Data(DataError),
    Train(TrainError),
    Eval(EvalError),
    Checkpoint(CkptError),
    Embed(EmbedError),
    Io { path: String, msg: String },
    /// The run directory is owned by another process (or a stale lock).
    Locked { path: String },
}

impl HarnessError {
    /// Process exit code: 2 config, 3 data/artifacts, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Locked { .. } => 2,
            HarnessError::Eval(EvalError::MissingModule) => 2,
            HarnessError::Data(_)
            | HarnessError::Io { .. }
            | HarnessError::Checkpoint(_)
            | HarnessError::Embed(_) => 3,
            HarnessError::Train(TrainError::Data(_))
            | HarnessError::Train(TrainError::Embed(_))
            | HarnessError::Train(TrainError::NoExamples)
            | HarnessError::Train(TrainError::TargetTooLong { .. })
            | HarnessError::Train(TrainError::QueryTooLong { .. }) => 3,
            HarnessError::Train(_) | HarnessError::Eval(_) => 4,
        }
    }
}

impl std::fmt::Display for HarnessError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HarnessError::Config(e) => write!(f, "{e}"),
            HarnessError::Data(e) => write!(f, "{e}"),
            HarnessError::Train(e) => write!(f, "{e}"),
            HarnessError::Eval(e) => write!(f, "{e}"),
            HarnessError::Checkpoint(e) => write!(f, "{e}"),
            HarnessError::Embed(e) => write!(f, "{e}"),
            HarnessError::Io { path, msg } => write!(f, "io {path}: {msg}"),
            HarnessError::Locked { path } => {
                write!(f, "run directory is locked by {path}; remove the file if stale")
            }
        }
    }
}

impl std::error::Error for HarnessError {}

macro_rules! from_err {
    ($src:ty, $variant:ident) => {
        impl From<$src> for HarnessError {
            fn from(e: $src) -> Self {
                HarnessError::$variant(e)
            }
        }
    };
}
from_err!(ConfigError, Config);
from_err!(DataError, Data);
from_err!(TrainError, Train);
from_err!(EvalError, Eval);
from_err!(CkptError, Checkpoint);
from_err!(EmbedError, Embed);

impl From<TensorError> for HarnessError {
    fn from(e: TensorError) -> Self {
        HarnessError::Train(TrainError::Tensor(e))
    }
}

fn io_err(path: &Path, e: std::io::Error) -> HarnessError {
    HarnessError::Io { path: path.display().to_string(), msg: e.to_string() }
}

// ---- Run directory ownership ----

/// Exclusive ownership of a run directory for the lifetime of the guard.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<RunLock, HarnessError> {
        std::fs::create_dir_all(run_dir).map_err(|e| io_err(run_dir, e))?;
        let path = run_dir.join("lock");
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(HarnessError::Locked { path: path.display().to_string() })
            }
            Err(e) => Err(io_err(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

// ---- Metrics log ----

/// One deterministic metrics record; optional fields appear only when the
/// record carries them.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub split: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weighted_precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weighted_recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weighted_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parse_failure_rate: Option<f64>,
}

struct MetricsLog {
    file: std::io::BufWriter<std::fs::File>,
    last_step: Option<u64>,
}

impl MetricsLog {
    /// Truncating create: a rerun rewrites the log from scratch so that
    /// identical runs leave byte-identical files.
    fn create(path: &Path) -> Result<MetricsLog, HarnessError> {
        let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
        Ok(MetricsLog { file: std::io::BufWriter::new(file), last_step: None })
    }

    fn append(&mut self, record: &MetricsRecord) -> Result<(), HarnessError> {
        if let Some(last) = self.last_step {
            assert!(record.step >= last, "metrics steps must be monotonic");
        }
        self.last_step = Some(record.step);
        let line = serde_json::to_string(record).expect("record always serializes");
        writeln!(self.file, "{line}")
            .map_err(|e| HarnessError::Io { path: "metrics.jsonl".into(), msg: e.to_string() })
    }

    fn finish(mut self) -> Result<(), HarnessError> {
        self.file
            .flush()
            .map_err(|e| HarnessError::Io { path: "metrics.jsonl".into(), msg: e.to_string() })
    }
}

// ---- Shared plumbing ----

pub fn run_dir(cfg: &RunConfig) -> PathBuf {
    cfg.run.output_dir.join(&cfg.run.name)
}

/// Token vocabulary from the training split: the instruction, every item's
/// rendered text, and every target sentence.
pub fn build_token_vocab(train: &[UserHistory], cap: usize) -> Vocab {
    let mut corpus: Vec<String> = vec![INSTRUCTION.to_string()];
    for user in train {
        corpus.push(build_preference_labels(user).target_text);
        for item in &user.items {
            corpus.push(render_item_text(item));
        }
    }
    Vocab::build(corpus.iter().map(String::as_str), cap)
}

fn prepare_examples(
    cfg: &RunConfig,
    users: &[UserHistory],
    vocab: &Vocab,
) -> Result<Vec<PreparedExample>, TrainError> {
    match cfg.run.mode {
        Mode::Embedding => {
            prepare_embedding_examples(users, cfg.train.p, &cfg.embedder, vocab, &cfg.lm)
        }
        Mode::Text => prepare_text_examples(users, cfg.train.p, vocab, &cfg.lm),
    }
}

/// Fresh parameter set + models for this config. The init stream derives
/// from the master seed; embedding mode registers the module first.
pub fn init_models(
    cfg: &RunConfig,
    vocab_size: usize,
) -> Result<(ParamSet, Option<UemModel>, LmModel), HarnessError> {
    let mut ps = ParamSet::new();
    let mut rng = RngState::for_substream(cfg.run.seed, 0x1217);
    let uem = match cfg.run.mode {
        Mode::Embedding => Some(UemModel::init(&mut ps, &mut rng, &cfg.uem)?),
        Mode::Text => None,
    };
    let lm = LmModel::init(&mut ps, &mut rng, &cfg.lm, vocab_size)?;
    Ok((ps, uem, lm))
}

// ---- synth-data ----

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SynthSummary {
    pub users: usize,
    pub movies: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub dir: PathBuf,
}

/// Generate a synthetic dataset and write its shards.
pub fn cmd_synth_data(cfg: &RunConfig) -> Result<SynthSummary, HarnessError> {
    let out = synth_generate(&cfg.synth)?;
    let (train, dev, test) =
        split_users(out.users, cfg.split.fractions, &cfg.split.salt)?;
    let summary = SynthSummary {
        users: cfg.synth.n_users,
        movies: out.movies.len(),
        train: train.len(),
        dev: dev.len(),
        test: test.len(),
        dir: cfg.data.dir.clone(),
    };
    write_dataset(&cfg.data.dir, &out.vocabulary, train, dev, test, Some(&out.latents))?;
    Ok(summary)
}

// ---- ingest ----

/// Ingest ratings/movies CSVs into data shards.
pub fn cmd_ingest(cfg: &RunConfig) -> Result<IngestReport, HarnessError> {
    let missing = |field: &str| {
        HarnessError::Config(ConfigError::Invalid {
            field: field.into(),
            msg: "required by ingest".into(),
        })
    };
    let ratings = cfg.data.ratings.as_deref().ok_or_else(|| missing("data.ratings"))?;
    let movies = cfg.data.movies.as_deref().ok_or_else(|| missing("data.movies"))?;
    let out = ingest(ratings, movies, cfg.data.descriptions.as_deref())?;
    let users = filter_min_views(out.users, cfg.data.min_views);
    let (train, dev, test) = split_users(users, cfg.split.fractions, &cfg.split.salt)?;
    write_dataset(&cfg.data.dir, &out.vocabulary, train, dev, test, None)?;
    Ok(out.report)
}

// ---- train ----

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TrainOutcome {
    pub steps: u64,
    pub final_loss: f64,
    pub prompt_shape_violations: u64,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    /// Dev weighted F1 at the final step, when a dev split was present.
    pub final_dev_f1: Option<f64>,
}

/// Train per the config: loads shards from `data.dir`, writes the resolved
/// config, token vocabulary, metrics log, and final checkpoint into the run
/// directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    let dir = run_dir(cfg);
    let _lock = RunLock::acquire(&dir)?;
    let config_toml = cfg.to_toml_string();
    atomic_write(&dir.join("config.toml"), config_toml.as_bytes())?;

    let genres = load_vocab(&cfg.data.dir)?;
    let train_users = load_split(&cfg.data.dir, Split::Train)?;
    let dev_users = load_split(&cfg.data.dir, Split::Dev).unwrap_or_default();
    let vocab = build_token_vocab(&train_users, cfg.data.vocab_cap);
    vocab.save(&dir.join("vocab.txt"))?;

    let examples = prepare_examples(cfg, &train_users, &vocab)?;
    let dev_examples =
        if dev_users.is_empty() { Vec::new() } else { prepare_examples(cfg, &dev_users, &vocab)? };

    let (ps, uem, lm) = init_models(cfg, vocab.len())?;
    let mut trainer =
        Trainer::new(ps, uem, lm, cfg.train.adam(), cfg.train.batch_size, cfg.run.seed);

    let mut log = MetricsLog::create(&dir.join("metrics.jsonl"))?;
    let ckpt_path = dir.join("checkpoint.bin");
    let mut final_loss = f64::NAN;
    let mut final_dev_f1 = None;

    let eval_dev = |trainer: &Trainer,
                        step: u64,
                        log: &mut MetricsLog|
     -> Result<Option<f64>, HarnessError> {
        if dev_examples.is_empty() {
            return Ok(None);
        }
        let report = evaluate_model(
            &trainer.params,
            trainer.uem.as_ref(),
            &trainer.lm,
            &vocab,
            &genres,
            &dev_examples,
            cfg.eval.label_space.into(),
            RunMeta {
                mode: cfg.run.mode.as_str().into(),
                p: cfg.train.p,
                k: cfg.lm.k,
                seed: cfg.run.seed,
            },
            cfg.eval.threads,
        )?;
        log.append(&MetricsRecord {
            step,
            split: "dev".into(),
            loss: None,
            weighted_precision: Some(report.weighted_precision),
            weighted_recall: Some(report.weighted_recall),
            weighted_f1: Some(report.weighted_f1),
            parse_failure_rate: Some(report.parse_failure_rate),
        })?;
        Ok(Some(report.weighted_f1))
    };

    for step in 1..=cfg.train.steps {
        let stats = trainer.train_step(&examples)?;
        final_loss = stats.loss;
        log.append(&MetricsRecord {
            step,
            split: "train".into(),
            loss: Some(stats.loss),
            weighted_precision: None,
            weighted_recall: None,
            weighted_f1: None,
            parse_failure_rate: None,
        })?;
        if cfg.train.eval_every > 0 && step % cfg.train.eval_every == 0 && step < cfg.train.steps
        {
            final_dev_f1 = eval_dev(&trainer, step, &mut log)?;
        }
        if cfg.train.checkpoint_every > 0 && step % cfg.train.checkpoint_every == 0 {
            save_checkpoint(&ckpt_path, &Checkpoint::from_trainer(&trainer, config_toml.clone()))?;
        }
    }
    final_dev_f1 = eval_dev(&trainer, cfg.train.steps, &mut log)?.or(final_dev_f1);
    save_checkpoint(&ckpt_path, &Checkpoint::from_trainer(&trainer, config_toml.clone()))?;
    log.finish()?;

    Ok(TrainOutcome {
        steps: trainer.step,
        final_loss,
        prompt_shape_violations: trainer.prompt_shape_violations,
        checkpoint: ckpt_path,
        metrics: dir.join("metrics.jsonl"),
        final_dev_f1,
    })
}

// ---- evaluate ----

/// Shape-relevant sections of the checkpoint's embedded config must match
/// the current config; training-schedule fields are free to differ.
fn check_checkpoint_compat(cfg: &RunConfig, embedded: &RunConfig) -> Result<(), HarnessError> {
    let mismatch = |field: &str| {
        Err(HarnessError::Config(ConfigError::Invalid {
            field: field.into(),
            msg: "differs from the checkpoint's embedded config".into(),
        }))
    };
    if cfg.run.mode != embedded.run.mode {
        return mismatch("run.mode");
    }
    if cfg.uem != embedded.uem {
        return mismatch("uem");
    }
    if cfg.lm != embedded.lm {
        return mismatch("lm");
    }
    if cfg.embedder != embedded.embedder {
        return mismatch("embedder");
    }
    if cfg.train.p != embedded.train.p {
        return mismatch("train.p");
    }
    Ok(())
}

/// Evaluate a checkpoint on one split; writes `eval-<split>.json` into the
/// run directory and returns the report.
pub fn cmd_evaluate(cfg: &RunConfig, split: Split) -> Result<EvalReport, HarnessError> {
    cfg.validate()?;
    let dir = run_dir(cfg);
    let ckpt = load_checkpoint(&dir.join("checkpoint.bin"))?;
    let embedded = RunConfig::from_toml_str(&ckpt.config_toml)?;
    check_checkpoint_compat(cfg, &embedded)?;

    let genres = load_vocab(&cfg.data.dir)?;
    let users = load_split(&cfg.data.dir, split)?;
    let vocab = Vocab::load(&dir.join("vocab.txt"))?;
    let examples = prepare_examples(cfg, &users, &vocab)?;

    let (mut ps, uem, lm) = init_models(cfg, vocab.len())?;
    ckpt.apply_params(&mut ps)?;

    let report = evaluate_model(
        &ps,
        uem.as_ref(),
        &lm,
        &vocab,
        &genres,
        &examples,
        cfg.eval.label_space.into(),
        RunMeta {
            mode: cfg.run.mode.as_str().into(),
            p: cfg.train.p,
            k: cfg.lm.k,
            seed: cfg.run.seed,
        },
        cfg.eval.threads,
    )?;
    let file = dir.join(format!("eval-{}.json", split_name(split)));
    let body = serde_json::to_string_pretty(&report).expect("report serializes");
    atomic_write(&file, body.as_bytes())?;
    Ok(report)
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Dev => "dev",
        Split::Test => "test",
    }
}

// ---- baseline ----

/// Score the counting baseline on one split (full histories; no model).
pub fn cmd_baseline(cfg: &RunConfig, split: Split) -> Result<EvalReport, HarnessError> {
    cfg.validate()?;
    let genres = load_vocab(&cfg.data.dir)?;
    let users = load_split(&cfg.data.dir, split)?;
    let golds: Vec<_> = users.iter().map(build_preference_labels).collect();
    let report = evaluate_counting_baseline(
        &users,
        &golds,
        &genres,
        cfg.eval.label_space.into(),
        RunMeta { mode: "baseline".into(), p: 0, k: 0, seed: cfg.run.seed },
    )?;
    Ok(report)
}

// ---- ablate ----

/// Which knob an ablation sweeps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SweepAxis {
    HistoryLength(Vec<usize>),
    ModuleLayers(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AblateRow {
    pub axis: String,
    pub value: usize,
    /// Dev weighted F1, or the failure message for this sweep point.
    pub result: Result<f64, String>,
}

/// Train + evaluate once per sweep point, sharing the seed and data. Each
/// point runs in its own subdirectory; a failing point records its error
/// and the sweep continues.
pub fn cmd_ablate(cfg: &RunConfig, axis: &SweepAxis) -> Result<Vec<AblateRow>, HarnessError> {
    cfg.validate()?;
    let (name, values): (&str, &[usize]) = match axis {
        SweepAxis::HistoryLength(vs) => ("p", vs),
        SweepAxis::ModuleLayers(vs) => ("uem_layers", vs),
    };
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut point = cfg.clone();
        point.run.name = format!("{}-{}{}", cfg.run.name, name, value);
        match axis {
            SweepAxis::HistoryLength(_) => point.train.p = value,
            SweepAxis::ModuleLayers(_) => point.uem.layers = value,
        }
        let result = point
            .validate()
            .map_err(HarnessError::Config)
            .and_then(|()| cmd_train(&point))
            .and_then(|outcome| {
                outcome.final_dev_f1.ok_or_else(|| {
                    HarnessError::Data(DataError::Io {
                        path: point.data.dir.display().to_string(),
                        msg: "no dev split to evaluate".into(),
                    })
                })
            })
            .map_err(|e| e.to_string());
        rows.push(AblateRow { axis: name.into(), value, result });
    }
    Ok(rows)
}

/// Ablation table: one row per sweep point.
pub fn render_ablate_table(rows: &[AblateRow]) -> String {
    let mut out = format!("{:<12} {:>8} {:>12}\n", "axis", "value", "dev_f1");
    for row in rows {
        match &row.result {
            Ok(f1) => out.push_str(&format!("{:<12} {:>8} {:>12.4}\n", row.axis, row.value, f1)),
            Err(e) => out.push_str(&format!("{:<12} {:>8} failed: {e}\n", row.axis, row.value)),
        }
    }
    out
}

// ---- cost-report ----

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CostOutcome {
    /// Longest-history user the comparison is based on.
    pub user_id: String,
    pub items: usize,
    pub report: CostReport,
}

/// Compare text vs embedding prompting cost on the longest history in the
/// training split, and write the quadratic-scaling data file.
pub fn cmd_cost_report(cfg: &RunConfig, data_file: Option<&Path>) -> Result<CostOutcome, HarnessError> {
    cfg.validate()?;
    let train_users = load_split(&cfg.data.dir, Split::Train)?;
    let vocab = build_token_vocab(&train_users, cfg.data.vocab_cap);
    let longest = train_users
        .iter()
        .max_by_key(|u| (u.items.len(), std::cmp::Reverse(u.user_id.clone())))
        .ok_or(HarnessError::Train(TrainError::NoExamples))?;
    let query_len = vocab.encode(INSTRUCTION).len();
    let report = cost_compare(longest, cfg.lm.k, query_len, &cfg.lm, &cfg.uem, &vocab);
    if let Some(path) = data_file {
        let ns: Vec<usize> = (0..=14).map(|i| 1usize << i).collect();
        let rows = scaling_rows(cfg.lm.enc_layers, cfg.lm.e, &ns);
        atomic_write(path, render_scaling_data(&rows).as_bytes())?;
    }
    Ok(CostOutcome {
        user_id: longest.user_id.clone(),
        items: longest.items.len(),
        report,
    })
}

/// Text body of the cost report file/stdout.
pub fn render_cost_outcome(outcome: &CostOutcome) -> String {
    let mut out = format!(
        "longest history: user {} with {} items\n",
        outcome.user_id, outcome.items
    );
    out.push_str(&render_cost_report(&outcome.report));
    out
}

// ---- gold labels for external consumers ----

/// Gold labels for a split's prepared examples (exposed for tests/tools).
pub fn gold_labels(examples: &[PreparedExample]) -> Vec<crate::data::PreferenceLabel> {
    golds_of(examples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp_root(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("uh-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    /// Small but trainable config over synthetic data.
    fn small_cfg(root: &Path) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.run.output_dir = root.join("runs");
        cfg.run.name = "t".into();
        cfg.data.dir = root.join("data");
        cfg.synth.n_users = 12;
        cfg.synth.n_movies = 60;
        cfg.embedder.s = 8;
        cfg.embedder.buckets = 64;
        cfg.uem.layers = 1;
        cfg.uem.heads = 2;
        cfg.uem.d_model = 8;
        cfg.uem.d_mlp = 16;
        cfg.uem.s = 8;
        cfg.uem.e = 16;
        cfg.uem.max_p = 8;
        cfg.lm.enc_layers = 1;
        cfg.lm.dec_layers = 1;
        cfg.lm.heads = 2;
        cfg.lm.e = 16;
        cfg.lm.d_mlp = 32;
        cfg.lm.k = 2;
        cfg.lm.max_input = 48;
        cfg.lm.max_output = 40;
        cfg.lm.max_history_rows = 8;
        cfg.train.steps = 4;
        cfg.train.batch_size = 3;
        cfg.train.p = 4;
        cfg.split.fractions = [0.6, 0.2, 0.2];
        cfg.eval.threads = 2;
        cfg.validate().unwrap();
        cfg
    }

    #[test]
    fn synth_data_writes_consistent_shards() {
        let root = tmp_root("synth");
        let cfg = small_cfg(&root);
        let summary = cmd_synth_data(&cfg).unwrap();
        assert_eq!(summary.train + summary.dev + summary.test, cfg.synth.n_users);
        let genres = load_vocab(&cfg.data.dir).unwrap();
        assert_eq!(genres.len(), 19);
        let train = load_split(&cfg.data.dir, Split::Train).unwrap();
        assert_eq!(train.len(), summary.train);
        std::fs::remove_dir_all(&root).unwrap();
    }

    #[test]
    fn train_then_evaluate_round_trips_through_artifacts() {
        let root = tmp_root("traineval");
        let cfg = small_cfg(&root);
        cmd_synth_data(&cfg).unwrap();
        let outcome = cmd_train(&cfg).unwrap();
        assert_eq!(outcome.steps, cfg.train.steps);
        assert!(outcome.final_loss.is_finite());
        assert_eq!(outcome.prompt_shape_violations, 0);
        assert!(outcome.checkpoint.exists());
        assert!(outcome.metrics.exists());
        assert!(outcome.final_dev_f1.is_some(), "dev split should be evaluated at end");

        let report = cmd_evaluate(&cfg, Split::Dev).unwrap();
        assert!(report.n_examples > 0);
        assert_eq!(report.meta.mode, "embedding");
        assert!(run_dir(&cfg).join("eval-dev.json").exists());

        // The lock is released once commands return.
        assert!(!run_dir(&cfg).join("lock").exists());
        std::fs::remove_dir_all(&root).unwrap();
    }

    #[test]
    fn identical_runs_produce_byte_identical_artifacts() {
        let root = tmp_root("det");
        let cfg = small_cfg(&root);
        cmd_synth_data(&cfg).unwrap();

        let mut a = cfg.clone();
        a.run.name = "a".into();
        let mut b = cfg.clone();
        b.run.name = "b".into();
        cmd_train(&a).unwrap();
        cmd_train(&b).unwrap();

        let read = |cfg: &RunConfig, f: &str| std::fs::read(run_dir(cfg).join(f)).unwrap();
        assert_eq!(read(&a, "metrics.jsonl"), read(&b, "metrics.jsonl"));
        // Checkpoints embed the config (which contains the run name), so
        // compare everything after that verbatim prefix differs: simplest
        // exact check is to re-save B's checkpoint with A's config text.
        let ca = load_checkpoint(&run_dir(&a).join("checkpoint.bin")).unwrap();
        let mut cb = load_checkpoint(&run_dir(&b).join("checkpoint.bin")).unwrap();
        cb.config_toml = ca.config_toml.clone();
        assert_eq!(ca, cb);
        std::fs::remove_dir_all(&root).unwrap();
    }

    #[test]
    fn locked_run_directory_is_refused() {
        let root = tmp_root("lock");
        let cfg = small_cfg(&root);
        cmd_synth_data(&cfg).unwrap();
        let dir = run_dir(&cfg);
        let _held = RunLock::acquire(&dir).unwrap();
        match cmd_train(&cfg) {
            Err(HarnessError::Locked { .. }) => {}
            other => panic!("expected Locked, got {other:?}"),
        }
        drop(_held);
        std::fs::remove_dir_all(&root).unwrap();
    }

    #[test]
    fn evaluate_rejects_mismatched_checkpoints() {
        let root = tmp_root("compat");
        let cfg = small_cfg(&root);
        cmd_synth_data(&cfg).unwrap();
        cmd_train(&cfg).unwrap();
        let mut other = cfg.clone();
        other.train.p = 8; // shape-relevant: examples change
        match cmd_evaluate(&other, Split::Dev) {
            Err(HarnessError::Config(ConfigError::Invalid { field, .. })) => {
                assert_eq!(field, "train.p");
            }
            other => panic!("expected config mismatch, got {other:?}"),
        }
        std::fs::remove_dir_all(&root).unwrap();
    }

    #[test]
    fn baseline_runs_without_any_model_artifacts() {
        let root = tmp_root("base");
        let cfg = small_cfg(&root);
        cmd_synth_data(&cfg).unwrap();
        let report = cmd_baseline(&cfg, Split::Dev).unwrap();
        assert!(report.n_examples > 0);
        assert_eq!(report.meta.mode, "baseline");
        assert_eq!(report.parse_failure_rate, 0.0);
        std::fs::remove_dir_all(&root).unwrap();
    }

    #[test]
    fn ablation_sweeps_continue_past_failing_points() {
        let root = tmp_root("ablate");
        let mut cfg = small_cfg(&root);
        cfg.train.steps = 2;
        cmd_synth_data(&cfg).unwrap();
        // 999 exceeds uem.max_p → config-invalid point; the others run.
        let rows =
            cmd_ablate(&cfg, &SweepAxis::HistoryLength(vec![2, 999, 4])).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[0].result.is_ok());
        assert!(rows[1].result.is_err());
        assert!(rows[2].result.is_ok());
        let table = render_ablate_table(&rows);
        assert!(table.contains("failed"));
        assert_eq!(table.lines().count(), 4);
        std::fs::remove_dir_all(&root).unwrap();
    }

    #[test]
    fn cost_report_uses_the_longest_history_and_writes_scaling_data() {
        let root = tmp_root("cost");
        let cfg = small_cfg(&root);
        cmd_synth_data(&cfg).unwrap();
        let data_file = root.join("scaling.dat");
        let outcome = cmd_cost_report(&cfg, Some(&data_file)).unwrap();
        let train = load_split(&cfg.data.dir, Split::Train).unwrap();
        let max_items = train.iter().map(|u| u.items.len()).max().unwrap();
        assert_eq!(outcome.items, max_items);
        assert!(outcome.report.ratio > 1.0, "text should cost more, got {}", outcome.report.ratio);
        let body = std::fs::read_to_string(&data_file).unwrap();
        assert!(body.starts_with("n attn_flops\n"));
        assert_eq!(body.lines().count(), 16);
        let rendered = render_cost_outcome(&outcome);
        assert!(rendered.contains("ratio"));
        std::fs::remove_dir_all(&root).unwrap();
    }

    #[test]
    fn text_mode_trains_without_a_module() {
        let root = tmp_root("textmode");
        let mut cfg = small_cfg(&root);
        cfg.run.mode = Mode::Text;
        cfg.lm.max_input = 96;
        cfg.train.p = 2;
        cmd_synth_data(&cfg).unwrap();
        let outcome = cmd_train(&cfg).unwrap();
        assert!(outcome.final_loss.is_finite());
        let report = cmd_evaluate(&cfg, Split::Dev).unwrap();
        assert_eq!(report.meta.mode, "text");
        std::fs::remove_dir_all(&root).unwrap();
    }
}
