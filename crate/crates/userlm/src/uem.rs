//! User embedding module: a small transformer encoder that compresses a
//! sequence of per-item history embeddings (width `3s`, one row per item)
//! into the same number of soft-prompt vectors of width `e`, ready to be
//! prepended to the language model's input.
//!
//! The stack runs at the item-embedding width `3s` with no input projection;
//! attention projects into an inner width `d_model` split across heads, and
//! a final linear layer maps `3s → e`. Blocks are pre-norm with residual
//! connections, followed by one final layer norm.

use crate::layers::{
    attention, gated_mlp, layer_norm, linear, normal_matrix, AttnParams, Binding,
    LayerNormParams, LinearParams, MlpParams, ParamRef, ParamSet,
};
use crate::rng::RngState;
use crate::tensor::graph::{Graph, NodeId};
use crate::tensor::{Tensor, TensorError};

/// Architecture of the user embedding module.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UemConfig {
    /// Transformer blocks.
    pub layers: usize,
    /// Attention heads; must divide `d_model`.
    pub heads: usize,
    /// Attention inner width (Q/K/V projection output).
    pub d_model: usize,
    /// Gated MLP hidden width.
    pub d_mlp: usize,
    /// Per-segment item-embedding width; the stream runs at `3s`.
    pub s: usize,
    /// Output soft-prompt width (must match the language model width).
    pub e: usize,
    /// Maximum history length the module can ingest.
    pub max_p: usize,
    /// Add learned absolute position rows to the input. Off, the module is
    /// exactly permutation-equivariant.
    pub use_positions: bool,
}

impl Default for UemConfig {
    fn default() -> Self {
        UemConfig {
            layers: 2,
            heads: 4,
            d_model: 64,
            d_mlp: 128,
            s: 64,
            e: 64,
            max_p: 128,
            use_positions: true,
        }
    }
}

impl UemConfig {
    /// Stream width of the transformer: three concatenated segments.
    pub fn width(&self) -> usize {
        3 * self.s
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let bad = |msg: String| Err(TensorError::BadDimension { msg });
        if self.layers == 0 {
            return bad("uem.layers must be ≥ 1".into());
        }
        if self.heads == 0 {
            return bad("uem.heads must be ≥ 1".into());
        }
        if self.d_model == 0 || self.d_model % self.heads != 0 {
            return bad(format!(
                "uem.heads {} must divide uem.d_model {}",
                self.heads, self.d_model
            ));
        }
        if self.d_mlp == 0 || self.s == 0 || self.e == 0 {
            return bad("uem widths must be ≥ 1".into());
        }
        if self.max_p == 0 {
            return bad("uem.max_p must be ≥ 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct UemBlock {
    ln1: LayerNormParams,
    attn: AttnParams,
    ln2: LayerNormParams,
    mlp: MlpParams,
}

/// Parameter handles for one user embedding module.
#[derive(Debug, Clone)]
pub struct UemModel {
    cfg: UemConfig,
    positions: Option<ParamRef>,
    blocks: Vec<UemBlock>,
    final_ln: LayerNormParams,
    out_proj: LinearParams,
}

impl UemModel {
    /// Register all parameters. Weights draw N(0, 1/fan_in), positions
    /// N(0, 0.02), biases zero, layer-norm gains one. Draw order is fixed:
    /// positions, then per block Q/K/V/O then gate/up/down, then the output
    /// projection.
    pub fn init(ps: &mut ParamSet, rng: &mut RngState, cfg: &UemConfig) -> Result<Self, TensorError> {
        cfg.validate()?;
        let w = cfg.width();
        let positions = cfg
            .use_positions
            .then(|| ps.add("uem.pos", normal_matrix(rng, cfg.max_p, w, 0.02)));
        let mut blocks = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            let p = format!("uem.block{i}");
            blocks.push(UemBlock {
                ln1: LayerNormParams::init(ps, &format!("{p}.ln1"), w),
                attn: AttnParams::init(ps, rng, &format!("{p}.attn"), w, cfg.d_model, w, cfg.heads)?,
                ln2: LayerNormParams::init(ps, &format!("{p}.ln2"), w),
                mlp: MlpParams::init(ps, rng, &format!("{p}.mlp"), w, cfg.d_mlp),
            });
        }
        let final_ln = LayerNormParams::init(ps, "uem.final_ln", w);
        let out_proj = LinearParams::init(ps, rng, "uem.out", w, cfg.e);
        Ok(UemModel { cfg: cfg.clone(), positions, blocks, final_ln, out_proj })
    }

    pub fn config(&self) -> &UemConfig {
        &self.cfg
    }

    /// Compress `p` item embeddings `[p, 3s]` into `p` soft-prompt rows
    /// `[p, e]`. An empty history yields an empty `[0, e]` result without
    /// touching the stack; more rows than `max_p` is a capacity error.
    pub fn forward(
        &self,
        g: &mut Graph,
        bind: &mut Binding,
        items: &Tensor,
    ) -> Result<NodeId, TensorError> {
        let (p, w) = items.dims2()?;
        if w != self.cfg.width() {
            return Err(TensorError::BadDimension {
                msg: format!("item embedding width {w} != 3s = {}", self.cfg.width()),
            });
        }
        if p == 0 {
            return Ok(g.constant(Tensor::zeros(vec![0, self.cfg.e])));
        }
        if p > self.cfg.max_p {
            return Err(TensorError::BadDimension {
                msg: format!("history length {p} exceeds capacity max_p = {}", self.cfg.max_p),
            });
        }

        let mut h = g.constant(items.clone());
        if let Some(pos) = self.positions {
            let table = bind.node(g, pos);
            let rows = g.slice_rows(table, 0, p)?;
            h = g.add(h, rows)?;
        }
        for block in &self.blocks {
            let normed = layer_norm(g, bind, &block.ln1, h)?;
            let attended = attention(g, bind, &block.attn, normed, normed, None)?;
            h = g.add(h, attended)?;
            let normed = layer_norm(g, bind, &block.ln2, h)?;
            let mixed = gated_mlp(g, bind, &block.mlp, normed)?;
            h = g.add(h, mixed)?;
        }
        let h = layer_norm(g, bind, &self.final_ln, h)?;
        linear(g, bind, &self.out_proj, h)
    }
}

/// Closed-form trainable scalar count for a configuration; must equal what
/// [`UemModel::init`] actually registers.
pub fn uem_param_count(cfg: &UemConfig) -> usize {
    let w = cfg.width();
    let per_layer = 2 * LayerNormParams::scalar_count(w)
        + AttnParams::scalar_count(w, cfg.d_model, w)
        + MlpParams::scalar_count(w, cfg.d_mlp);
    let positions = if cfg.use_positions { cfg.max_p * w } else { 0 };
    cfg.layers * per_layer
        + positions
        + LayerNormParams::scalar_count(w)
        + LinearParams::scalar_count(w, cfg.e)
}
