//! Toy text-to-text encoder-decoder language model with soft-prompt slots.
//!
//! The encoder input is assembled from three stacked row blocks, in order:
//! `k` trainable task-prompt rows, `p` user-history rows produced by the
//! user embedding module, and `n` embedded query tokens. Learned absolute
//! positions (by assembled row index) are added on top, so the model runs on
//! exactly `k + p + n` rows — that identity is audited on every pass.
//!
//! The decoder is causal, cross-attends into the encoder output, starts from
//! the padding id, and shares one token-embedding table between its inputs
//! and the output logits (`logits = H · Eᵀ`).

pub mod vocab;

use crate::layers::{
    attention, gated_mlp, layer_norm, normal_matrix, AttnParams, Binding, LayerNormParams,
    MlpParams, ParamRef, ParamSet,
};
use crate::rng::RngState;
use crate::tensor::graph::{Graph, NodeId};
use crate::tensor::{BoolMat, Tensor, TensorError};
use vocab::{EOS, PAD};

/// Architecture and capacity limits of the language model.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// Attention heads; must divide `e`.
    pub heads: usize,
    /// Model width; also the width soft prompts must arrive in.
    pub e: usize,
    /// Gated MLP hidden width.
    pub d_mlp: usize,
    /// Trainable task-prompt rows prepended to every encoder input.
    pub k: usize,
    /// Maximum query tokens per example.
    pub max_input: usize,
    /// Maximum decoder length (target tokens including end-of-sequence).
    pub max_output: usize,
    /// Maximum user-history soft-prompt rows accepted by the encoder.
    pub max_history_rows: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            enc_layers: 2,
            dec_layers: 2,
            heads: 4,
            e: 64,
            d_mlp: 128,
            k: 4,
            max_input: 48,
            max_output: 48,
            max_history_rows: 128,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        let bad = |msg: String| Err(TensorError::BadDimension { msg });
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return bad("lm layer counts must be ≥ 1".into());
        }
        if self.heads == 0 || self.e == 0 || self.e % self.heads != 0 {
            return bad(format!("lm.heads {} must divide lm.e {}", self.heads, self.e));
        }
        if self.d_mlp == 0 {
            return bad("lm.d_mlp must be ≥ 1".into());
        }
        if self.max_input == 0 || self.max_output == 0 {
            return bad("lm.max_input and lm.max_output must be ≥ 1".into());
        }
        Ok(())
    }

    /// Rows in the encoder position table: capacity for every block.
    pub fn enc_pos_rows(&self) -> usize {
        self.k + self.max_history_rows + self.max_input
    }
}

/// Row-count audit of one assembled encoder input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptShape {
    pub task_rows: usize,
    pub history_rows: usize,
    pub query_rows: usize,
    pub assembled_rows: usize,
}

impl PromptShape {
    /// The invariant audited on every pass: the encoder runs on exactly
    /// `task + history + query` rows.
    pub fn is_consistent(&self) -> bool {
        self.task_rows + self.history_rows + self.query_rows == self.assembled_rows
    }
}

#[derive(Debug, Clone)]
struct EncBlock {
    ln1: LayerNormParams,
    attn: AttnParams,
    ln2: LayerNormParams,
    mlp: MlpParams,
}

#[derive(Debug, Clone)]
struct DecBlock {
    ln1: LayerNormParams,
    self_attn: AttnParams,
    ln2: LayerNormParams,
    cross_attn: AttnParams,
    ln3: LayerNormParams,
    mlp: MlpParams,
}

/// Parameter handles for one encoder-decoder model.
#[derive(Debug, Clone)]
pub struct LmModel {
    cfg: LmConfig,
    vocab_size: usize,
    tok: ParamRef,
    task: Option<ParamRef>,
    enc_pos: ParamRef,
    dec_pos: ParamRef,
    enc_blocks: Vec<EncBlock>,
    enc_final: LayerNormParams,
    dec_blocks: Vec<DecBlock>,
    dec_final: LayerNormParams,
}

impl LmModel {
    /// Register all parameters. Token embeddings draw N(0, 1/e); the task
    /// prompt and both position tables draw N(0, 0.02²); projection weights
    /// draw N(0, 1/fan_in) with zero biases.
    pub fn init(
        ps: &mut ParamSet,
        rng: &mut RngState,
        cfg: &LmConfig,
        vocab_size: usize,
    ) -> Result<Self, TensorError> {
        cfg.validate()?;
        if vocab_size < 3 {
            return Err(TensorError::BadDimension {
                msg: format!("vocab size {vocab_size} smaller than the reserved ids"),
            });
        }
        let e = cfg.e;
        let tok = ps.add("lm.tok", normal_matrix(rng, vocab_size, e, 1.0 / (e as f64).sqrt()));
        let task = (cfg.k > 0).then(|| ps.add("lm.task", normal_matrix(rng, cfg.k, e, 0.02)));
        let enc_pos = ps.add("lm.enc_pos", normal_matrix(rng, cfg.enc_pos_rows(), e, 0.02));
        let dec_pos = ps.add("lm.dec_pos", normal_matrix(rng, cfg.max_output, e, 0.02));
        let mut enc_blocks = Vec::with_capacity(cfg.enc_layers);
        for i in 0..cfg.enc_layers {
            let p = format!("lm.enc{i}");
            enc_blocks.push(EncBlock {
                ln1: LayerNormParams::init(ps, &format!("{p}.ln1"), e),
                attn: AttnParams::init(ps, rng, &format!("{p}.attn"), e, e, e, cfg.heads)?,
                ln2: LayerNormParams::init(ps, &format!("{p}.ln2"), e),
                mlp: MlpParams::init(ps, rng, &format!("{p}.mlp"), e, cfg.d_mlp),
            });
        }
        let enc_final = LayerNormParams::init(ps, "lm.enc_final", e);
        let mut dec_blocks = Vec::with_capacity(cfg.dec_layers);
        for i in 0..cfg.dec_layers {
            let p = format!("lm.dec{i}");
            dec_blocks.push(DecBlock {
                ln1: LayerNormParams::init(ps, &format!("{p}.ln1"), e),
                self_attn: AttnParams::init(ps, rng, &format!("{p}.self"), e, e, e, cfg.heads)?,
                ln2: LayerNormParams::init(ps, &format!("{p}.ln2"), e),
                cross_attn: AttnParams::init(ps, rng, &format!("{p}.cross"), e, e, e, cfg.heads)?,
                ln3: LayerNormParams::init(ps, &format!("{p}.ln3"), e),
                mlp: MlpParams::init(ps, rng, &format!("{p}.mlp"), e, cfg.d_mlp),
            });
        }
        let dec_final = LayerNormParams::init(ps, "lm.dec_final", e);
        Ok(LmModel {
            cfg: cfg.clone(),
            vocab_size,
            tok,
            task,
            enc_pos,
            dec_pos,
            enc_blocks,
            enc_final,
            dec_blocks,
            dec_final,
        })
    }

    pub fn config(&self) -> &LmConfig {
        &self.cfg
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Stack task prompt, history rows, and embedded query; add positions.
    fn assemble_prompt(
        &self,
        g: &mut Graph,
        bind: &mut Binding,
        history: Option<NodeId>,
        query_ids: &[usize],
    ) -> Result<(NodeId, PromptShape), TensorError> {
        let n = query_ids.len();
        if n > self.cfg.max_input {
            return Err(TensorError::BadDimension {
                msg: format!("query length {n} exceeds lm.max_input {}", self.cfg.max_input),
            });
        }
        let p = match history {
            Some(id) => {
                let (rows, cols) = g.value(id).dims2()?;
                if cols != self.cfg.e {
                    return Err(TensorError::BadDimension {
                        msg: format!("history rows width {cols} != lm.e {}", self.cfg.e),
                    });
                }
                if rows > self.cfg.max_history_rows {
                    return Err(TensorError::BadDimension {
                        msg: format!(
                            "history rows {rows} exceed lm.max_history_rows {}",
                            self.cfg.max_history_rows
                        ),
                    });
                }
                rows
            }
            None => 0,
        };

        let mut parts = Vec::new();
        if let Some(task) = self.task {
            parts.push(bind.node(g, task));
        }
        if let (Some(id), true) = (history, p > 0) {
            parts.push(id);
        }
        if n > 0 {
            let tok = bind.node(g, self.tok);
            parts.push(g.embed_lookup(tok, query_ids)?);
        }
        if parts.is_empty() {
            return Err(TensorError::BadDimension {
                msg: "assembled prompt has no rows (k = 0, no history, empty query)".into(),
            });
        }
        let stacked = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts)? };
        let (rows, _) = g.value(stacked).dims2()?;
        let pos = bind.node(g, self.enc_pos);
        let pos_rows = g.slice_rows(pos, 0, rows)?;
        let assembled = g.add(stacked, pos_rows)?;
        let shape = PromptShape {
            task_rows: self.cfg.k,
            history_rows: p,
            query_rows: n,
            assembled_rows: rows,
        };
        Ok((assembled, shape))
    }

    /// Run the encoder over the assembled prompt. Returns the final-norm
    /// output `[k+p+n, e]` and the row-count audit.
    pub fn encode(
        &self,
        g: &mut Graph,
        bind: &mut Binding,
        history: Option<NodeId>,
        query_ids: &[usize],
    ) -> Result<(NodeId, PromptShape), TensorError> {
        let (mut h, shape) = self.assemble_prompt(g, bind, history, query_ids)?;
        for block in &self.enc_blocks {
            let normed = layer_norm(g, bind, &block.ln1, h)?;
            let attended = attention(g, bind, &block.attn, normed, normed, None)?;
            h = g.add(h, attended)?;
            let normed = layer_norm(g, bind, &block.ln2, h)?;
            let mixed = gated_mlp(g, bind, &block.mlp, normed)?;
            h = g.add(h, mixed)?;
        }
        let out = layer_norm(g, bind, &self.enc_final, h)?;
        Ok((out, shape))
    }

    /// Causal decoder over `input_ids` (already shifted right), returning
    /// next-token logits `[len, vocab]` through the tied embedding table.
    pub fn decode_logits(
        &self,
        g: &mut Graph,
        bind: &mut Binding,
        enc_out: NodeId,
        input_ids: &[usize],
    ) -> Result<NodeId, TensorError> {
        let m = input_ids.len();
        if m == 0 {
            return Err(TensorError::BadDimension { msg: "decoder input is empty".into() });
        }
        if m > self.cfg.max_output {
            return Err(TensorError::BadDimension {
                msg: format!("decoder length {m} exceeds lm.max_output {}", self.cfg.max_output),
            });
        }
        let tok = bind.node(g, self.tok);
        let emb = g.embed_lookup(tok, input_ids)?;
        let pos = bind.node(g, self.dec_pos);
        let pos_rows = g.slice_rows(pos, 0, m)?;
        let mut h = g.add(emb, pos_rows)?;
        let causal = BoolMat::causal(m);
        for block in &self.dec_blocks {
            let normed = layer_norm(g, bind, &block.ln1, h)?;
            let attended = attention(g, bind, &block.self_attn, normed, normed, Some(&causal))?;
            h = g.add(h, attended)?;
            let normed = layer_norm(g, bind, &block.ln2, h)?;
            let crossed = attention(g, bind, &block.cross_attn, normed, enc_out, None)?;
            h = g.add(h, crossed)?;
            let normed = layer_norm(g, bind, &block.ln3, h)?;
            let mixed = gated_mlp(g, bind, &block.mlp, normed)?;
            h = g.add(h, mixed)?;
        }
        let h = layer_norm(g, bind, &self.dec_final, h)?;
        let tok_t = g.transpose(tok)?;
        g.matmul(h, tok_t)
    }

    /// Teacher-forced training loss: mean cross-entropy over the target
    /// tokens (which must end with [`EOS`] and contain no padding).
    pub fn forward_loss(
        &self,
        g: &mut Graph,
        bind: &mut Binding,
        history: Option<NodeId>,
        query_ids: &[usize],
        target_ids: &[usize],
    ) -> Result<(NodeId, PromptShape), TensorError> {
        if target_ids.is_empty() {
            return Err(TensorError::BadDimension { msg: "empty target".into() });
        }
        let (enc_out, shape) = self.encode(g, bind, history, query_ids)?;
        // Shift right: the decoder sees PAD then all but the last target id.
        let mut input_ids = Vec::with_capacity(target_ids.len());
        input_ids.push(PAD);
        input_ids.extend_from_slice(&target_ids[..target_ids.len() - 1]);
        let logits = self.decode_logits(g, bind, enc_out, &input_ids)?;
        let loss = g.cross_entropy_mean(logits, target_ids, Some(PAD))?;
        Ok((loss, shape))
    }

    /// Greedy decoding: encode once, then repeatedly re-run the decoder on
    /// the grown prefix with the encoder output held constant. Ties pick the
    /// lowest id; generation stops at [`EOS`] (excluded) or `max_output`.
    pub fn greedy_decode(
        &self,
        params: &ParamSet,
        history: Option<&Tensor>,
        query_ids: &[usize],
    ) -> Result<Vec<usize>, TensorError> {
        let enc_values = {
            let mut g = Graph::new();
            let mut bind = Binding::new(params);
            let hist_node = match history {
                Some(t) => Some(g.constant(t.clone())),
                None => None,
            };
            let (enc_out, _) = self.encode(&mut g, &mut bind, hist_node, query_ids)?;
            g.value(enc_out).clone()
        };

        let mut input_ids = vec![PAD];
        let mut generated = Vec::new();
        for _ in 0..self.cfg.max_output {
            let mut g = Graph::new();
            let mut bind = Binding::new(params);
            let enc_out = g.constant(enc_values.clone());
            let logits = self.decode_logits(&mut g, &mut bind, enc_out, &input_ids)?;
            let lv = g.value(logits);
            let (rows, cols) = lv.dims2()?;
            let last = &lv.data()[(rows - 1) * cols..rows * cols];
            let mut best = 0usize;
            for (i, &v) in last.iter().enumerate() {
                if v > last[best] {
                    best = i;
                }
            }
            if best == EOS {
                break;
            }
            generated.push(best);
            if input_ids.len() == self.cfg.max_output {
                break;
            }
            input_ids.push(best);
        }
        Ok(generated)
    }
}

/// Closed-form trainable scalar count; must equal what [`LmModel::init`]
/// registers.
pub fn lm_param_count(cfg: &LmConfig, vocab_size: usize) -> usize {
    let e = cfg.e;
    let attn = AttnParams::scalar_count(e, e, e);
    let mlp = MlpParams::scalar_count(e, cfg.d_mlp);
    let ln = LayerNormParams::scalar_count(e);
    let enc_block = 2 * ln + attn + mlp;
    let dec_block = 3 * ln + 2 * attn + mlp;
    vocab_size * e
        + cfg.k * e
        + cfg.enc_pos_rows() * e
        + cfg.max_output * e
        + cfg.enc_layers * enc_block
        + ln
        + cfg.dec_layers * dec_block
        + ln
}
