//! Joint training of the user embedding module and the language model:
//! Adam, batch assembly, and example preparation.
//!
//! Item embeddings are frozen (the hashing embedder has no gradients), so
//! each user's truncated history is embedded once up front and reused every
//! step; only the module and model parameters train.

use crate::data::labels::{build_preference_labels, truncate_history};
use crate::data::render::{render_history_item, render_item_text, INSTRUCTION};
use crate::data::{DataError, UserHistory};
use crate::embedder::{embed_rows, EmbedError, EmbedderConfig};
use crate::layers::{Binding, ParamSet};
use crate::lm::vocab::{Vocab, EOS};
use crate::lm::{LmModel, PromptShape};
use crate::rng::RngState;
use crate::tensor::graph::Graph;
use crate::tensor::{Tensor, TensorError};
use crate::uem::UemModel;

#[derive(Debug)]
pub enum TrainError {
    Tensor(TensorError),
    Data(DataError),
    Embed(EmbedError),
    /// Training loss stopped being finite; the run must abort rather than
    /// continue on poisoned parameters.
    NonFinite { step: u64, loss: f64 },
    NoExamples,
    /// A rendered target cannot fit the decoder.
    TargetTooLong { user_id: String, len: usize, max: usize },
    /// A query cannot fit the encoder even after history truncation.
    QueryTooLong { user_id: String, len: usize, max: usize },
}

impl std::fmt::Display for TrainError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrainError::Tensor(e) => write!(f, "tensor error: {e}"),
            TrainError::Data(e) => write!(f, "data error: {e}"),
            TrainError::Embed(e) => write!(f, "embedding error: {e}"),
            TrainError::NonFinite { step, loss } => {
                write!(f, "non-finite loss {loss} at step {step}; aborting")
            }
            TrainError::NoExamples => write!(f, "no training examples"),
            TrainError::TargetTooLong { user_id, len, max } => {
                write!(f, "target for user {user_id} has {len} tokens, max_output is {max}")
            }
            TrainError::QueryTooLong { user_id, len, max } => {
                write!(f, "query for user {user_id} has {len} tokens, max_input is {max}")
            }
        }
    }
}

impl std::error::Error for TrainError {}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Tensor(e)
    }
}

impl From<DataError> for TrainError {
    fn from(e: DataError) -> Self {
        TrainError::Data(e)
    }
}

impl From<EmbedError> for TrainError {
    fn from(e: EmbedError) -> Self {
        TrainError::Embed(e)
    }
}

// ---- Adam ----

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment accumulators, aligned with [`ParamSet`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(ps: &ParamSet) -> Self {
        let m = ps.refs().map(|r| vec![0.0; ps.get(r).numel()]).collect::<Vec<_>>();
        let v = m.clone();
        AdamState { m, v, t: 0 }
    }

    /// One dense update. Parameters whose gradient slot is `None` are
    /// treated as having a zero gradient (moments decay, no drift from rest).
    pub fn step(&mut self, ps: &mut ParamSet, grads: &[Option<Vec<f64>>], cfg: &AdamConfig) {
        self.t += 1;
        let t = self.t as i32;
        let bias1 = 1.0 - cfg.beta1.powi(t);
        let bias2 = 1.0 - cfg.beta2.powi(t);
        for (i, r) in ps.refs().collect::<Vec<_>>().into_iter().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let theta = ps.get_mut(r).data_mut();
            match grads[i].as_deref() {
                Some(g) => {
                    for j in 0..theta.len() {
                        m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
                        v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
                        let mhat = m[j] / bias1;
                        let vhat = v[j] / bias2;
                        theta[j] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
                    }
                }
                None => {
                    for j in 0..theta.len() {
                        m[j] *= cfg.beta1;
                        v[j] *= cfg.beta2;
                        let mhat = m[j] / bias1;
                        let vhat = v[j] / bias2;
                        theta[j] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
                    }
                }
            }
        }
    }
}

// ---- prepared examples ----

/// How the user's history reaches the model.
#[derive(Debug, Clone, PartialEq)]
pub enum PreparedInput {
    /// Item embeddings `[p, 3s]` to be compressed by the user embedding
    /// module into soft prompts.
    SoftHistory(Tensor),
    /// History is already serialized into the query tokens; no module runs.
    TextOnly,
}

/// One training/evaluation example with all text work done up front.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedExample {
    pub user_id: String,
    pub input: PreparedInput,
    pub query_ids: Vec<usize>,
    /// Ends with the end-of-sequence id.
    pub target_ids: Vec<usize>,
    /// Reference label sets for evaluation (already sorted by the label
    /// rules): liked genres, then disliked genres.
    pub gold_liked: Vec<String>,
    pub gold_disliked: Vec<String>,
    /// History items dropped to fit the query budget (text mode only).
    pub truncated_items: usize,
}

/// Embedding-mode preparation: truncate to the most recent `p` items, embed
/// the three rendered segments per item, and encode the fixed instruction.
pub fn prepare_embedding_examples(
    users: &[UserHistory],
    p: usize,
    embed_cfg: &EmbedderConfig,
    vocab: &Vocab,
    lm_cfg: &crate::lm::LmConfig,
) -> Result<Vec<PreparedExample>, TrainError> {
    embed_cfg.validate()?;
    let query_ids = vocab.encode(INSTRUCTION);
    if query_ids.len() > lm_cfg.max_input {
        return Err(TrainError::QueryTooLong {
            user_id: "<instruction>".into(),
            len: query_ids.len(),
            max: lm_cfg.max_input,
        });
    }
    users
        .iter()
        .map(|user| {
            let label = build_preference_labels(user);
            let target_ids = encode_target(vocab, &label.target_text, user, lm_cfg)?;
            let window = truncate_history(user, p);
            let segments: Vec<[String; 3]> = window
                .items
                .iter()
                .map(|item| {
                    let (a, b, c) = render_history_item(item);
                    [a, b, c]
                })
                .collect();
            let matrix = embed_rows(&segments, embed_cfg);
            let items = Tensor::new(vec![matrix.rows(), matrix.cols()], matrix.data().to_vec())?;
            Ok(PreparedExample {
                user_id: user.user_id.clone(),
                input: PreparedInput::SoftHistory(items),
                query_ids: query_ids.clone(),
                target_ids,
                gold_liked: label.liked,
                gold_disliked: label.disliked,
                truncated_items: 0,
            })
        })
        .collect()
}

/// Text-mode preparation: the most recent `p` items are rendered to text and
/// appended to the instruction. If the query exceeds the model's input
/// budget, the oldest items in the window are dropped first (counted); a
/// query that cannot fit even with zero items is an error.
pub fn prepare_text_examples(
    users: &[UserHistory],
    p: usize,
    vocab: &Vocab,
    lm_cfg: &crate::lm::LmConfig,
) -> Result<Vec<PreparedExample>, TrainError> {
    users
        .iter()
        .map(|user| {
            let label = build_preference_labels(user);
            let target_ids = encode_target(vocab, &label.target_text, user, lm_cfg)?;
            let window = truncate_history(user, p);
            let mut dropped = 0usize;
            let query_ids = loop {
                let keep = &window.items[dropped.min(window.items.len())..];
                let mut text = INSTRUCTION.to_string();
                for item in keep {
                    text.push(' ');
                    text.push_str(&render_item_text(item));
                }
                let ids = vocab.encode(&text);
                if ids.len() <= lm_cfg.max_input {
                    break ids;
                }
                if keep.is_empty() {
                    return Err(TrainError::QueryTooLong {
                        user_id: user.user_id.clone(),
                        len: ids.len(),
                        max: lm_cfg.max_input,
                    });
                }
                dropped += 1;
            };
            Ok(PreparedExample {
                user_id: user.user_id.clone(),
                input: PreparedInput::TextOnly,
                query_ids,
                target_ids,
                gold_liked: label.liked,
                gold_disliked: label.disliked,
                truncated_items: dropped,
            })
        })
        .collect()
}

fn encode_target(
    vocab: &Vocab,
    target_text: &str,
    user: &UserHistory,
    lm_cfg: &crate::lm::LmConfig,
) -> Result<Vec<usize>, TrainError> {
    let mut ids = vocab.encode(target_text);
    ids.push(EOS);
    if ids.len() > lm_cfg.max_output {
        return Err(TrainError::TargetTooLong {
            user_id: user.user_id.clone(),
            len: ids.len(),
            max: lm_cfg.max_output,
        });
    }
    Ok(ids)
}

// ---- trainer ----

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub step: u64,
    /// Token-weighted mean cross-entropy over the batch.
    pub loss: f64,
}

/// Owns everything that evolves during a run: parameters, optimizer
/// moments, the batch-sampling stream, and the audit counters.
pub struct Trainer {
    pub params: ParamSet,
    pub uem: Option<UemModel>,
    pub lm: LmModel,
    pub adam: AdamState,
    pub adam_cfg: AdamConfig,
    pub batch_size: usize,
    pub rng: RngState,
    pub step: u64,
    /// Assembled prompts whose row count failed the `k + p + n` audit.
    /// Zero on every healthy run.
    pub prompt_shape_violations: u64,
}

impl Trainer {
    pub fn new(
        params: ParamSet,
        uem: Option<UemModel>,
        lm: LmModel,
        adam_cfg: AdamConfig,
        batch_size: usize,
        sampler_seed: u64,
    ) -> Self {
        let adam = AdamState::new(&params);
        Trainer {
            params,
            uem,
            lm,
            adam,
            adam_cfg,
            batch_size: batch_size.max(1),
            rng: RngState::for_substream(sampler_seed, 0xba7c4),
            step: 0,
            prompt_shape_violations: 0,
        }
    }

    /// Loss of one example inside an existing graph, plus its token count
    /// and prompt audit.
    fn example_loss(
        &self,
        g: &mut Graph,
        bind: &mut Binding,
        ex: &PreparedExample,
    ) -> Result<(crate::tensor::graph::NodeId, usize, PromptShape), TrainError> {
        let history = match (&ex.input, &self.uem) {
            (PreparedInput::SoftHistory(items), Some(uem)) => {
                Some(uem.forward(g, bind, items)?)
            }
            (PreparedInput::SoftHistory(_), None) => {
                return Err(TrainError::Tensor(TensorError::GraphState {
                    msg: "example carries item embeddings but no module is configured".into(),
                }))
            }
            (PreparedInput::TextOnly, _) => None,
        };
        let (loss, shape) =
            self.lm.forward_loss(g, bind, history, &ex.query_ids, &ex.target_ids)?;
        Ok((loss, ex.target_ids.len(), shape))
    }

    /// Sample a batch with replacement, take one optimizer step, and return
    /// the batch loss. Aborts with [`TrainError::NonFinite`] if the loss is
    /// not a finite number.
    pub fn train_step(&mut self, examples: &[PreparedExample]) -> Result<StepStats, TrainError> {
        if examples.is_empty() {
            return Err(TrainError::NoExamples);
        }
        let picks: Vec<usize> =
            (0..self.batch_size).map(|_| self.rng.next_below(examples.len())).collect();

        let mut g = Graph::new();
        let mut bind = Binding::new(&self.params);
        let mut weighted = Vec::with_capacity(picks.len());
        let mut total_tokens = 0usize;
        for &i in &picks {
            let (loss, tokens, shape) = self.example_loss(&mut g, &mut bind, &examples[i])?;
            if !shape.is_consistent() {
                self.prompt_shape_violations += 1;
            }
            weighted.push((loss, tokens));
            total_tokens += tokens;
        }
        let mut batch_loss = None;
        for (loss, tokens) in weighted {
            let scaled = g.scale(loss, tokens as f64 / total_tokens as f64);
            batch_loss = Some(match batch_loss {
                None => scaled,
                Some(acc) => g.add(acc, scaled)?,
            });
        }
        let batch_loss = batch_loss.expect("batch_size >= 1");
        let loss_value = g.value(batch_loss).item()?;
        if !loss_value.is_finite() {
            return Err(TrainError::NonFinite { step: self.step, loss: loss_value });
        }
        g.backward(batch_loss)?;
        let grads = bind.gradients(&g);
        self.adam.step(&mut self.params, &grads, &self.adam_cfg);
        self.step += 1;
        Ok(StepStats { step: self.step, loss: loss_value })
    }
}
