//! Attention-cost accounting: token counts for text-prompted histories,
//! the quadratic attention-FLOP comparator, and the text-vs-embedding
//! compute comparison.
//!
//! The FLOP model deliberately counts only the attention score and value
//! matmuls (QKᵀ and attention·V), not projections or MLPs: the compute
//! argument for history compression is specifically about the O(n²)
//! self-attention term, and a fuller roofline model would not change the
//! asymptotic story. `width` is the attention projection width, which the
//! head count cancels out of: h heads of width d/h cost exactly what one
//! head of width d costs.

use crate::data::render::{render_item_text, INSTRUCTION};
use crate::data::UserHistory;
use crate::lm::vocab::Vocab;
use crate::lm::LmConfig;
use crate::uem::UemConfig;

/// Exact multiply-accumulate count for self-attention over a length-`n`
/// sequence: `layers · 4 · n² · width` (2 ops each for QKᵀ and
/// attention·V). Integer arithmetic throughout; `n = 0` costs 0.
pub fn attention_flops(n: usize, layers: usize, width: usize) -> u128 {
    layers as u128 * 4 * (n as u128) * (n as u128) * width as u128
}

/// Total tokens needed to prompt with the full history as text: the query
/// plus every item's rendered text. Additive over items by definition — no
/// separator tokens are charged between items.
pub fn text_history_token_count(history: &UserHistory, vocab: &Vocab) -> usize {
    let query = vocab.encode(INSTRUCTION).len();
    let items: usize =
        history.items.iter().map(|it| vocab.encode(&render_item_text(it)).len()).sum();
    query + items
}

/// How one forward pass spends its encoder sequence budget.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PromptBreakdown {
    /// Task rows, compressed history rows, query token rows.
    Embedding { k: usize, p: usize, n_query: usize },
    /// One flat token sequence.
    Text { n_text: usize },
}

/// Attention cost of one stack (a model's encoder, or the embedding
/// module) over one sequence.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CostProfile {
    /// "text", "embedding-lm", or "embedding-uem".
    pub mode: String,
    pub seq_len: usize,
    pub layers: usize,
    pub heads: usize,
    /// Attention projection width.
    pub width: usize,
    pub attn_flops: u128,
    pub breakdown: PromptBreakdown,
}

/// Text-prompting vs embedding-prompting for one user history.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CostReport {
    pub text: CostProfile,
    pub embedding_lm: CostProfile,
    pub embedding_uem: CostProfile,
    /// `embedding_lm.attn_flops + embedding_uem.attn_flops`, with no
    /// hidden constants.
    pub embedding_total_flops: u128,
    /// text FLOPs / embedding total FLOPs.
    pub ratio: f64,
}

/// Compare prompting the language model with the full rendered history
/// against compressing the same history into one row per item. The
/// embedding side pays for the module's own attention over `p` rows on top
/// of the shorter encoder pass.
pub fn cost_compare(
    history: &UserHistory,
    k: usize,
    n_query: usize,
    lm_cfg: &LmConfig,
    uem_cfg: &UemConfig,
    vocab: &Vocab,
) -> CostReport {
    let p = history.items.len();
    let n_text = text_history_token_count(history, vocab);
    let text = CostProfile {
        mode: "text".into(),
        seq_len: n_text,
        layers: lm_cfg.enc_layers,
        heads: lm_cfg.heads,
        width: lm_cfg.e,
        attn_flops: attention_flops(n_text, lm_cfg.enc_layers, lm_cfg.e),
        breakdown: PromptBreakdown::Text { n_text },
    };
    let n_emb = k + p + n_query;
    let embedding_lm = CostProfile {
        mode: "embedding-lm".into(),
        seq_len: n_emb,
        layers: lm_cfg.enc_layers,
        heads: lm_cfg.heads,
        width: lm_cfg.e,
        attn_flops: attention_flops(n_emb, lm_cfg.enc_layers, lm_cfg.e),
        breakdown: PromptBreakdown::Embedding { k, p, n_query },
    };
    let embedding_uem = CostProfile {
        mode: "embedding-uem".into(),
        seq_len: p,
        layers: uem_cfg.layers,
        heads: uem_cfg.heads,
        width: uem_cfg.d_model,
        attn_flops: attention_flops(p, uem_cfg.layers, uem_cfg.d_model),
        breakdown: PromptBreakdown::Embedding { k: 0, p, n_query: 0 },
    };
    let embedding_total_flops = embedding_lm.attn_flops + embedding_uem.attn_flops;
    let ratio = if embedding_total_flops == 0 {
        f64::INFINITY
    } else {
        text.attn_flops as f64 / embedding_total_flops as f64
    };
    CostReport { text, embedding_lm, embedding_uem, embedding_total_flops, ratio }
}

/// `(n, attention_flops(n))` rows for plotting the quadratic law.
pub fn scaling_rows(layers: usize, width: usize, ns: &[usize]) -> Vec<(usize, u128)> {
    ns.iter().map(|&n| (n, attention_flops(n, layers, width))).collect()
}

/// Two-column whitespace-separated data file body: `n flops` per line.
pub fn render_scaling_data(rows: &[(usize, u128)]) -> String {
    let mut out = String::from("n attn_flops\n");
    for (n, f) in rows {
        out.push_str(&format!("{n} {f}\n"));
    }
    out
}

/// Human-readable comparison report.
pub fn render_cost_report(r: &CostReport) -> String {
    let line = |p: &CostProfile| {
        format!(
            "{:<14} seq={:<6} layers={} width={:<5} attn_flops={}\n",
            p.mode, p.seq_len, p.layers, p.width, p.attn_flops
        )
    };
    let mut out = String::from("attention cost comparison (score/value matmul MACs)\n");
    out.push_str(&line(&r.text));
    out.push_str(&line(&r.embedding_lm));
    out.push_str(&line(&r.embedding_uem));
    out.push_str(&format!("embedding total: {}\n", r.embedding_total_flops));
    out.push_str(&format!("text / embedding ratio: {:.1}\n", r.ratio));
    out
}
