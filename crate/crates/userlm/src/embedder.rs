//! Deterministic text embedder: the stand-in for a pretrained sentence
//! encoder.
//!
//! Each history item contributes three segment texts (title+genre, rating,
//! description). A segment is embedded by hashing its lowercased alphanumeric
//! tokens into buckets, summing a fixed seeded random row per bucket, and
//! L2-normalizing. The map is a pure function of (text, config): no training,
//! no vocabulary, bit-stable across runs and platforms. Semantic quality is
//! beside the point — the architecture under study only needs a deterministic
//! `text → fixed-width vector` interface, and externally computed embeddings
//! can be imported from a file instead.

use crate::rng::{hash_bytes, RngState};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Configuration of the hashing embedder.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderConfig {
    /// Per-segment embedding width; a full item row is `3s` wide.
    pub s: usize,
    /// Feature-hash bucket count.
    pub buckets: usize,
    /// Seed for the fixed random projection.
    pub seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig { s: 64, buckets: 4096, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbedError {
    BadConfig { msg: String },
    /// File header not in `UEMEMB v1 p=<int> dim=<int>` form.
    MalformedHeader { line: String },
    /// Header or row shape disagrees with what the caller expects.
    ShapeMismatch { expected_rows: usize, expected_cols: usize, got_rows: usize, got_cols: usize },
    NonFiniteEntry { row: usize, col: usize },
    Io { msg: String },
}

impl fmt::Display for EmbedError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbedError::BadConfig { msg } => write!(f, "embedder config: {msg}"),
            EmbedError::MalformedHeader { line } => {
                write!(f, "embedding file: malformed header {line:?}")
            }
            EmbedError::ShapeMismatch { expected_rows, expected_cols, got_rows, got_cols } => {
                write!(
                    f,
                    "embedding file: expected {expected_rows}x{expected_cols}, got {got_rows}x{got_cols}"
                )
            }
            EmbedError::NonFiniteEntry { row, col } => {
                write!(f, "embedding file: non-finite entry at row {row}, col {col}")
            }
            EmbedError::Io { msg } => write!(f, "embedding file: {msg}"),
        }
    }
}

impl std::error::Error for EmbedError {}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.s < 8 {
            return Err(EmbedError::BadConfig { msg: format!("s = {} below minimum 8", self.s) });
        }
        if self.buckets < self.s {
            return Err(EmbedError::BadConfig {
                msg: format!("buckets = {} smaller than s = {}", self.buckets, self.s),
            });
        }
        Ok(())
    }
}

/// Composite per-item embeddings: one row per history item, `3s` wide
/// (title+genre, rating, description segments concatenated in that order).
#[derive(Debug, Clone, PartialEq)]
pub struct ItemEmbeddingMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    /// False for matrices imported from a file, whose segment norms are not
    /// enforced.
    pub segment_norms_checked: bool,
}

impl ItemEmbeddingMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Lowercased maximal alphanumeric runs; everything else is a separator.
fn hash_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                current.push(lc);
            }
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Embed one segment text into an L2-normalized `s`-vector. Empty or
/// separator-only text maps to the exact zero vector.
pub fn embed_text(text: &str, cfg: &EmbedderConfig) -> Vec<f64> {
    let tokens = hash_tokens(text);
    if tokens.is_empty() {
        return vec![0.0; cfg.s];
    }
    let mut out = vec![0.0; cfg.s];
    for token in &tokens {
        let bucket = hash_bytes(cfg.seed, token.as_bytes()) % cfg.buckets as u64;
        // The bucket's projection row is generated on demand from its own
        // substream, which is exactly equivalent to materializing the full
        // buckets-by-s random matrix up front.
        let mut row_rng = RngState::for_substream(cfg.seed, bucket);
        for slot in out.iter_mut() {
            *slot += row_rng.next_normal();
        }
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in out.iter_mut() {
            *v /= norm;
        }
    }
    out
}

/// Embed three segment texts and concatenate: `[title+genre ; rating ;
/// description]`, `3s` wide.
pub fn embed_segments(
    title_genre: &str,
    rating: &str,
    description: &str,
    cfg: &EmbedderConfig,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * cfg.s);
    out.extend(embed_text(title_genre, cfg));
    out.extend(embed_text(rating, cfg));
    out.extend(embed_text(description, cfg));
    out
}

/// Stack per-item composite embeddings, one row per item, chronological order
/// preserved.
pub fn embed_rows(items: &[[String; 3]], cfg: &EmbedderConfig) -> ItemEmbeddingMatrix {
    let cols = 3 * cfg.s;
    let mut data = Vec::with_capacity(items.len() * cols);
    for segs in items {
        data.extend(embed_segments(&segs[0], &segs[1], &segs[2], cfg));
    }
    ItemEmbeddingMatrix { rows: items.len(), cols, data, segment_norms_checked: true }
}

/// Write a matrix in the interchange format: header `UEMEMB v1 p=<rows>
/// dim=<cols>`, then one line of space-separated decimals per row.
pub fn save_embedding_file(path: &Path, m: &ItemEmbeddingMatrix) -> Result<(), EmbedError> {
    let mut out = String::new();
    out.push_str(&format!("UEMEMB v1 p={} dim={}\n", m.rows, m.cols));
    for i in 0..m.rows {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| EmbedError::Io { msg: format!("{path:?}: {e}") })
}

/// Load an externally produced embedding matrix, validating shape and
/// finiteness. Segment norms are deliberately NOT enforced for imports;
/// the returned matrix is flagged accordingly.
pub fn load_embedding_file(
    path: &Path,
    expected_rows: usize,
    expected_cols: usize,
) -> Result<ItemEmbeddingMatrix, EmbedError> {
    let file =
        std::fs::File::open(path).map_err(|e| EmbedError::Io { msg: format!("{path:?}: {e}") })?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| EmbedError::MalformedHeader { line: "<empty file>".into() })?
        .map_err(|e| EmbedError::Io { msg: e.to_string() })?;
    let (rows, cols) = parse_header(&header)?;
    if rows != expected_rows || cols != expected_cols {
        return Err(EmbedError::ShapeMismatch {
            expected_rows,
            expected_cols,
            got_rows: rows,
            got_cols: cols,
        });
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| EmbedError::Io { msg: e.to_string() })?;
        if i >= rows {
            if line.trim().is_empty() {
                continue;
            }
            return Err(EmbedError::ShapeMismatch {
                expected_rows: rows,
                expected_cols: cols,
                got_rows: i + 1,
                got_cols: cols,
            });
        }
        let entries: Vec<&str> = line.split_whitespace().collect();
        if entries.len() != cols {
            return Err(EmbedError::ShapeMismatch {
                expected_rows: rows,
                expected_cols: cols,
                got_rows: i,
                got_cols: entries.len(),
            });
        }
        for (j, raw) in entries.iter().enumerate() {
            let v: f64 = raw.parse().map_err(|_| EmbedError::NonFiniteEntry { row: i, col: j })?;
            if !v.is_finite() {
                return Err(EmbedError::NonFiniteEntry { row: i, col: j });
            }
            data.push(v);
        }
    }
    if data.len() != rows * cols {
        return Err(EmbedError::ShapeMismatch {
            expected_rows: rows,
            expected_cols: cols,
            got_rows: data.len() / cols.max(1),
            got_cols: cols,
        });
    }
    Ok(ItemEmbeddingMatrix { rows, cols, data, segment_norms_checked: false })
}

fn parse_header(header: &str) -> Result<(usize, usize), EmbedError> {
    let bad = || EmbedError::MalformedHeader { line: header.to_string() };
    let mut parts = header.split_whitespace();
    if parts.next() != Some("UEMEMB") || parts.next() != Some("v1") {
        return Err(bad());
    }
    let p_part = parts.next().ok_or_else(bad)?;
    let dim_part = parts.next().ok_or_else(bad)?;
    if parts.next().is_some() {
        return Err(bad());
    }
    let rows = p_part.strip_prefix("p=").ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let cols = dim_part.strip_prefix("dim=").ok_or_else(bad)?.parse().map_err(|_| bad())?;
    Ok((rows, cols))
}

// Convenience used by tests and the cost module.
#[allow(unused)]
pub(crate) fn write_str(path: &Path, text: &str) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> EmbedderConfig {
        EmbedderConfig { s: 16, buckets: 64, seed: 7 }
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn empty_and_whitespace_texts_embed_to_exact_zero() {
        assert!(embed_text("", &cfg()).iter().all(|&v| v == 0.0));
        assert!(embed_text("  \t\n ", &cfg()).iter().all(|&v| v == 0.0));
        assert!(embed_text("...!!!", &cfg()).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nonzero_embeddings_are_unit_norm() {
        for text in ["action", "The movie Heat is listed with genres Action, Crime", "a b c d"] {
            let e = embed_text(text, &cfg());
            let norm: f64 = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6, "{text}: norm {norm}");
        }
    }

    #[test]
    fn embedding_is_deterministic() {
        let a = embed_text("some history item text", &cfg());
        let b = embed_text("some history item text", &cfg());
        assert_eq!(a, b);
    }

    #[test]
    fn bag_of_tokens_is_order_invariant() {
        let a = embed_text("action adventure", &cfg());
        let b = embed_text("adventure action", &cfg());
        assert!((cosine(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn case_and_punctuation_are_normalized_away() {
        let a = embed_text("Sci-Fi, Action!", &cfg());
        let b = embed_text("sci fi action", &cfg());
        assert!((cosine(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn different_seeds_give_different_embeddings() {
        let base = cfg();
        let other = EmbedderConfig { seed: 8, ..cfg() };
        let corpus: Vec<String> = (0..100).map(|i| format!("movie number {i} drama")).collect();
        for text in &corpus {
            assert_ne!(embed_text(text, &base), embed_text(text, &other), "{text}");
        }
    }

    #[test]
    fn segments_concatenate_in_fixed_order() {
        let c = cfg();
        let full = embed_segments("t g", "r", "", &c);
        assert_eq!(full.len(), 3 * c.s);
        assert_eq!(&full[..c.s], embed_text("t g", &c).as_slice());
        assert_eq!(&full[c.s..2 * c.s], embed_text("r", &c).as_slice());
        assert!(full[2 * c.s..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rating_change_touches_only_middle_segment() {
        let c = cfg();
        let a = embed_segments("The movie X is listed with genres Action", "The movie is rated with 4 stars", "desc", &c);
        let b = embed_segments("The movie X is listed with genres Action", "The movie is rated with 3.5 stars", "desc", &c);
        assert_eq!(&a[..c.s], &b[..c.s]);
        assert_ne!(&a[c.s..2 * c.s], &b[c.s..2 * c.s]);
        assert_eq!(&a[2 * c.s..], &b[2 * c.s..]);
    }

    #[test]
    fn matrix_rows_equal_per_item_calls() {
        let c = cfg();
        let items = vec![
            ["alpha".into(), "beta".into(), "gamma".into()],
            ["delta".into(), "".into(), "epsilon zeta".into()],
        ];
        let m = embed_rows(&items, &c);
        assert_eq!(m.rows(), 2);
        assert_eq!(m.cols(), 3 * c.s);
        for (i, segs) in items.iter().enumerate() {
            assert_eq!(m.row(i), embed_segments(&segs[0], &segs[1], &segs[2], &c).as_slice());
        }
    }

    #[test]
    fn empty_history_embeds_to_zero_row_matrix() {
        let m = embed_rows(&[], &cfg());
        assert_eq!(m.rows(), 0);
        assert_eq!(m.cols(), 3 * cfg().s);
        assert!(m.data().is_empty());
    }

    #[test]
    fn config_bounds_enforced() {
        assert!(EmbedderConfig { s: 4, buckets: 64, seed: 0 }.validate().is_err());
        assert!(EmbedderConfig { s: 16, buckets: 8, seed: 0 }.validate().is_err());
        assert!(cfg().validate().is_ok());
    }

    #[test]
    fn embedding_file_round_trips() {
        let dir = std::env::temp_dir().join(format!("uememb-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("hist.emb");
        let items = vec![["a".into(), "b".into(), "c".into()], ["d".into(), "e".into(), "f".into()]];
        let m = embed_rows(&items, &cfg());
        save_embedding_file(&path, &m).unwrap();
        let loaded = load_embedding_file(&path, 2, 48).unwrap();
        assert_eq!(loaded.data(), m.data());
        assert!(!loaded.segment_norms_checked);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn embedding_file_errors_are_distinct() {
        let dir = std::env::temp_dir().join(format!("uememb-err-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();

        let bad_header = dir.join("h.emb");
        std::fs::write(&bad_header, "EMB v0 p=1 dim=2\n0 0\n").unwrap();
        assert!(matches!(
            load_embedding_file(&bad_header, 1, 2),
            Err(EmbedError::MalformedHeader { .. })
        ));

        let wrong_shape = dir.join("s.emb");
        std::fs::write(&wrong_shape, "UEMEMB v1 p=3 dim=2\n").unwrap();
        assert!(matches!(
            load_embedding_file(&wrong_shape, 1, 2),
            Err(EmbedError::ShapeMismatch { .. })
        ));

        let non_finite = dir.join("n.emb");
        std::fs::write(&non_finite, "UEMEMB v1 p=1 dim=2\n1.0 NaN\n").unwrap();
        assert!(matches!(
            load_embedding_file(&non_finite, 1, 2),
            Err(EmbedError::NonFiniteEntry { row: 0, col: 1 })
        ));

        let short_row = dir.join("r.emb");
        std::fs::write(&short_row, "UEMEMB v1 p=1 dim=3\n1.0 2.0\n").unwrap();
        assert!(matches!(
            load_embedding_file(&short_row, 1, 3),
            Err(EmbedError::ShapeMismatch { .. })
        ));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
