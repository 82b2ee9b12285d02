//! Evaluation: the verbalizer that parses generated text back into genre
//! sets, weighted multi-label precision/recall/F1, the frequency-counting
//! baseline, and greedy-decode model evaluation.
//!
//! The label space is the set of binary labels `liked_{genre}` and
//! `disliked_{genre}` over the genre vocabulary — 38 labels for the
//! 19-genre pipeline. Scoring both polarities is this crate's documented
//! choice; [`LabelSpace::LikedOnly`] restricts scoring to the 19 liked
//! labels for comparison.

use crate::data::render::render_target;
use crate::data::{GenreVocabulary, PreferenceLabel, UserHistory};
use crate::layers::{Binding, ParamSet};
use crate::lm::vocab::{tokenize, Vocab};
use crate::lm::LmModel;
use crate::tensor::graph::Graph;
use crate::tensor::TensorError;
use crate::train::{PreparedExample, PreparedInput};
use crate::uem::UemModel;
use std::collections::BTreeMap;

#[derive(Debug, PartialEq)]
pub enum EvalError {
    LengthMismatch { preds: usize, golds: usize },
    Tensor(TensorError),
    /// An example carries item embeddings but no user embedding module was
    /// provided.
    MissingModule,
}

impl std::fmt::Display for EvalError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EvalError::LengthMismatch { preds, golds } => {
                write!(f, "{preds} predictions scored against {golds} gold labels")
            }
            EvalError::Tensor(e) => write!(f, "tensor error during evaluation: {e}"),
            EvalError::MissingModule => {
                write!(f, "example carries item embeddings but no module is configured")
            }
        }
    }
}

impl std::error::Error for EvalError {}

impl From<TensorError> for EvalError {
    fn from(e: TensorError) -> Self {
        EvalError::Tensor(e)
    }
}

// ---- Verbalizer ----

/// Genre sets recovered from one generated sentence.
///
/// `liked`/`disliked` hold canonical vocabulary names in vocabulary order,
/// are duplicate-free, and are disjoint: a genre claimed by both clauses is
/// kept as liked, dropped from disliked, and flagged via `overlap_anomaly`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerbalizedPrediction {
    pub liked: Vec<String>,
    pub disliked: Vec<String>,
    /// False iff the text contains neither preference clause nor the
    /// neutral sentence.
    pub parse_ok: bool,
    pub overlap_anomaly: bool,
    pub raw_text: String,
}

/// The clause markers, as alphanumeric token sequences. These mirror the
/// target templates in the render module; a test asserts they stay in sync.
const LIKES_MARKER: [&str; 6] = ["likes", "to", "watch", "movies", "with", "genres"];
const DISLIKES_MARKER: [&str; 8] =
    ["doesn", "t", "like", "to", "watch", "movies", "with", "genres"];
const NEUTRAL_MARKER: [&str; 7] = ["the", "user", "has", "no", "strong", "genre", "preferences"];

/// Lowercased alphanumeric tokens only; punctuation tokens are dropped, so
/// "doesn't" and "Sci-Fi" compare as [doesn, t] and [sci, fi].
fn alnum_tokens(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| t.chars().all(|c| c.is_ascii_alphanumeric()))
        .collect()
}

fn find_marker(toks: &[String], marker: &[&str]) -> Option<usize> {
    if marker.len() > toks.len() {
        return None;
    }
    (0..=toks.len() - marker.len())
        .find(|&i| toks[i..i + marker.len()].iter().zip(marker).all(|(t, m)| t == m))
}

/// Genre token patterns sorted longest first (ties by name) so that
/// multi-token names are matched before any shorter name could consume
/// their tokens.
fn genre_patterns(vocab: &GenreVocabulary) -> Vec<(Vec<String>, usize)> {
    let mut pats: Vec<(Vec<String>, usize)> = vocab
        .names()
        .iter()
        .enumerate()
        .map(|(i, name)| (alnum_tokens(name), i))
        .filter(|(pat, _)| !pat.is_empty())
        .collect();
    pats.sort_by(|a, b| {
        b.0.len().cmp(&a.0.len()).then_with(|| vocab.names()[a.1].cmp(&vocab.names()[b.1]))
    });
    pats
}

/// Scan a clause region left to right, consuming each matched genre's
/// tokens. Returns matched vocabulary indices, ascending.
fn extract_genres(region: &[String], patterns: &[(Vec<String>, usize)]) -> Vec<usize> {
    let mut found: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < region.len() {
        let hit = patterns.iter().find(|(pat, _)| {
            i + pat.len() <= region.len() && region[i..i + pat.len()] == pat[..]
        });
        match hit {
            Some((pat, gi)) => {
                if !found.contains(gi) {
                    found.push(*gi);
                }
                i += pat.len();
            }
            None => i += 1,
        }
    }
    found.sort_unstable();
    found
}

/// Parse one generated sentence into genre sets. Case-insensitive, never
/// fails: unparseable text comes back with empty sets and `parse_ok` false.
pub fn verbalize(text: &str, vocab: &GenreVocabulary) -> VerbalizedPrediction {
    let toks = alnum_tokens(text);
    let likes_pos = find_marker(&toks, &LIKES_MARKER);
    let dislikes_pos = find_marker(&toks, &DISLIKES_MARKER);
    let neutral = find_marker(&toks, &NEUTRAL_MARKER).is_some();
    let patterns = genre_patterns(vocab);

    // A clause's genre region runs from just past its marker to the start
    // of the other clause's marker (when that comes later) or end of text.
    let region = |start: usize, other: Option<usize>| -> &[String] {
        let end = match other {
            Some(o) if o >= start => o,
            _ => toks.len(),
        };
        &toks[start..end]
    };
    let mut liked_idx = likes_pos
        .map(|p| extract_genres(region(p + LIKES_MARKER.len(), dislikes_pos), &patterns))
        .unwrap_or_default();
    let mut disliked_idx = dislikes_pos
        .map(|p| extract_genres(region(p + DISLIKES_MARKER.len(), likes_pos), &patterns))
        .unwrap_or_default();

    let overlap_anomaly = disliked_idx.iter().any(|g| liked_idx.contains(g));
    disliked_idx.retain(|g| !liked_idx.contains(g));
    liked_idx.sort_unstable();
    disliked_idx.sort_unstable();

    let name = |idx: &[usize]| idx.iter().map(|&i| vocab.names()[i].clone()).collect();
    VerbalizedPrediction {
        liked: name(&liked_idx),
        disliked: name(&disliked_idx),
        parse_ok: likes_pos.is_some() || dislikes_pos.is_some() || neutral,
        overlap_anomaly,
        raw_text: text.to_string(),
    }
}

// ---- Counting baseline ----

/// Predict the three genres that occur on the most history items (ties by
/// name, ascending), ignoring ratings entirely; never predicts dislikes.
/// Counts run over the full history the caller passes in.
pub fn counting_baseline(history: &UserHistory) -> VerbalizedPrediction {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for item in &history.items {
        for genre in &item.movie.genres {
            *counts.entry(genre.as_str()).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let liked: Vec<String> = ranked.iter().take(3).map(|(name, _)| name.to_string()).collect();
    let raw_text = render_target(&liked, &[]);
    VerbalizedPrediction {
        liked,
        disliked: Vec::new(),
        parse_ok: true,
        overlap_anomaly: false,
        raw_text,
    }
}

// ---- Weighted precision / recall / F1 ----

/// Which binary labels are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LabelSpace {
    /// `liked_g` and `disliked_g` for every vocabulary genre (the default:
    /// the target sentence encodes both polarities).
    Both,
    /// `liked_g` only, for comparison.
    LikedOnly,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LabelMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold-positive count; labels with support 0 are excluded from the
    /// weighted aggregates.
    pub support: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// Identifies an evaluation run in reports and logs.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunMeta {
    /// "embedding", "text", or "baseline".
    pub mode: String,
    /// History length.
    pub p: usize,
    /// Task soft-prompt rows.
    pub k: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub meta: RunMeta,
    pub per_label: Vec<LabelMetrics>,
    /// Σ(metric · support) / Σsupport over labels with support > 0; zero
    /// when no label has gold positives.
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub n_examples: usize,
    pub parse_failure_rate: f64,
    /// Predictions that claimed a genre as both liked and disliked.
    pub overlap_anomalies: usize,
}

/// Per-label precision/recall/F1, aggregated with weights equal to each
/// label's gold-positive support. Zero-denominator conventions: precision
/// and recall are 0 when their denominator is 0; F1 is 0 when p + r = 0.
pub fn weighted_prf(
    preds: &[VerbalizedPrediction],
    golds: &[PreferenceLabel],
    vocab: &GenreVocabulary,
    space: LabelSpace,
) -> Result<EvalReport, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch { preds: preds.len(), golds: golds.len() });
    }
    // (prefix, per-example predicted set, per-example gold set) per polarity.
    let polarities: &[(&str, fn(&VerbalizedPrediction) -> &[String], fn(&PreferenceLabel) -> &[String])] =
        match space {
            LabelSpace::Both => &[
                ("liked", |p| &p.liked, |g| &g.liked),
                ("disliked", |p| &p.disliked, |g| &g.disliked),
            ],
            LabelSpace::LikedOnly => &[("liked", |p| &p.liked, |g| &g.liked)],
        };

    let mut per_label = Vec::with_capacity(vocab.len() * polarities.len());
    for (prefix, pred_set, gold_set) in polarities {
        for genre in vocab.names() {
            let mut tp = 0usize;
            let mut fp = 0usize;
            let mut fneg = 0usize;
            for (pred, gold) in preds.iter().zip(golds) {
                let p = pred_set(pred).iter().any(|g| g == genre);
                let g = gold_set(gold).iter().any(|g| g == genre);
                match (p, g) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    (false, false) => {}
                }
            }
            let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let recall = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            per_label.push(LabelMetrics {
                label: format!("{prefix}_{genre}"),
                precision,
                recall,
                f1,
                support: tp + fneg,
                true_positives: tp,
                false_positives: fp,
                false_negatives: fneg,
            });
        }
    }

    let total_support: usize = per_label.iter().map(|l| l.support).sum();
    let weighted = |metric: fn(&LabelMetrics) -> f64| -> f64 {
        if total_support == 0 {
            return 0.0;
        }
        per_label.iter().map(|l| metric(l) * l.support as f64).sum::<f64>()
            / total_support as f64
    };

    let failures = preds.iter().filter(|p| !p.parse_ok).count();
    Ok(EvalReport {
        meta: RunMeta::default(),
        weighted_precision: weighted(|l| l.precision),
        weighted_recall: weighted(|l| l.recall),
        weighted_f1: weighted(|l| l.f1),
        n_examples: preds.len(),
        parse_failure_rate: if preds.is_empty() {
            0.0
        } else {
            failures as f64 / preds.len() as f64
        },
        overlap_anomalies: preds.iter().filter(|p| p.overlap_anomaly).count(),
        per_label,
    })
}

/// Gold labels carried by prepared examples, in example order.
pub fn golds_of(examples: &[PreparedExample]) -> Vec<PreferenceLabel> {
    examples
        .iter()
        .map(|ex| PreferenceLabel {
            liked: ex.gold_liked.clone(),
            disliked: ex.gold_disliked.clone(),
            target_text: render_target(&ex.gold_liked, &ex.gold_disliked),
        })
        .collect()
}

// ---- Model evaluation ----

fn decode_one(
    params: &ParamSet,
    uem: Option<&UemModel>,
    lm: &LmModel,
    tok: &Vocab,
    ex: &PreparedExample,
) -> Result<String, EvalError> {
    let ids = match &ex.input {
        PreparedInput::SoftHistory(items) => {
            let uem = uem.ok_or(EvalError::MissingModule)?;
            let mut g = Graph::new();
            let mut bind = Binding::new(params);
            let node = uem.forward(&mut g, &mut bind, items)?;
            let history = g.value(node).clone();
            lm.greedy_decode(params, Some(&history), &ex.query_ids)?
        }
        PreparedInput::TextOnly => lm.greedy_decode(params, None, &ex.query_ids)?,
    };
    Ok(tok.decode_text(&ids))
}

/// Greedy-decode every example and verbalize the generated text. Examples
/// are split across `threads` workers; predictions come back in example
/// order regardless of thread count.
pub fn decode_predictions(
    params: &ParamSet,
    uem: Option<&UemModel>,
    lm: &LmModel,
    tok: &Vocab,
    genres: &GenreVocabulary,
    examples: &[PreparedExample],
    threads: usize,
) -> Result<Vec<VerbalizedPrediction>, EvalError> {
    let threads = threads.max(1).min(examples.len().max(1));
    let chunk = examples.len().div_ceil(threads);
    if threads <= 1 || chunk == 0 {
        return examples
            .iter()
            .map(|ex| Ok(verbalize(&decode_one(params, uem, lm, tok, ex)?, genres)))
            .collect();
    }
    let chunk_results: Vec<Result<Vec<VerbalizedPrediction>, EvalError>> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = examples
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || {
                        part.iter()
                            .map(|ex| {
                                Ok(verbalize(&decode_one(params, uem, lm, tok, ex)?, genres))
                            })
                            .collect()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("decode worker panicked")).collect()
        });
    let mut out = Vec::with_capacity(examples.len());
    for part in chunk_results {
        out.extend(part?);
    }
    Ok(out)
}

/// Decode, verbalize, and score a prepared split against its gold labels.
pub fn evaluate_model(
    params: &ParamSet,
    uem: Option<&UemModel>,
    lm: &LmModel,
    tok: &Vocab,
    genres: &GenreVocabulary,
    examples: &[PreparedExample],
    space: LabelSpace,
    meta: RunMeta,
    threads: usize,
) -> Result<EvalReport, EvalError> {
    let preds = decode_predictions(params, uem, lm, tok, genres, examples, threads)?;
    let golds = golds_of(examples);
    let mut report = weighted_prf(&preds, &golds, genres, space)?;
    report.meta = meta;
    Ok(report)
}

/// Score the counting baseline over (full-history, gold-label) pairs.
pub fn evaluate_counting_baseline(
    users: &[UserHistory],
    golds: &[PreferenceLabel],
    genres: &GenreVocabulary,
    space: LabelSpace,
    meta: RunMeta,
) -> Result<EvalReport, EvalError> {
    let preds: Vec<VerbalizedPrediction> = users.iter().map(counting_baseline).collect();
    let mut report = weighted_prf(&preds, &golds, genres, space)?;
    report.meta = meta;
    Ok(report)
}

/// Plain-text comparison table over named reports (one row per run).
pub fn render_table(rows: &[(&str, &EvalReport)]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24} {:>6} {:>9} {:>9} {:>9} {:>10}\n",
        "run", "n", "prec", "recall", "f1", "parse-fail"
    ));
    for (name, r) in rows {
        out.push_str(&format!(
            "{:<24} {:>6} {:>9.4} {:>9.4} {:>9.4} {:>10.4}\n",
            name,
            r.n_examples,
            r.weighted_precision,
            r.weighted_recall,
            r.weighted_f1,
            r.parse_failure_rate
        ));
    }
    out
}
