//! Data model for movie-preference histories: records, ratings on the
//! half-star grid, genre vocabulary, and gold preference labels.

pub mod ingest;
pub mod labels;
pub mod render;
pub mod shards;
pub mod split;
pub mod synth;

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

/// Pipeline errors. Every variant names enough context to locate the bad
/// record.
#[derive(Debug, Clone, PartialEq)]
pub enum DataError {
    /// Rating off the half-star grid or outside [0.5, 5.0].
    BadRating { value: f64 },
    MalformedRow { path: String, line: usize, msg: String },
    /// MovieLens-mode genre vocabulary must have exactly 19 distinct names.
    WrongGenreCount { got: usize },
    DuplicateGenre { name: String },
    EmptyGenreVocabulary,
    UnknownGenre { name: String },
    EmptyGenres { movie_id: String },
    EmptyHistory { user_id: String },
    BadFractions { sum: f64 },
    BadSynthConfig { msg: String },
    Io { path: String, msg: String },
    Encode { msg: String },
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::BadRating { value } => {
                write!(f, "rating {value} is not on the half-star grid in [0.5, 5.0]")
            }
            DataError::MalformedRow { path, line, msg } => {
                write!(f, "{path}:{line}: malformed row: {msg}")
            }
            DataError::WrongGenreCount { got } => {
                write!(f, "genre vocabulary must have exactly 19 genres, found {got}")
            }
            DataError::DuplicateGenre { name } => write!(f, "duplicate genre {name:?}"),
            DataError::EmptyGenreVocabulary => write!(f, "genre vocabulary is empty"),
            DataError::UnknownGenre { name } => write!(f, "genre {name:?} not in vocabulary"),
            DataError::EmptyGenres { movie_id } => {
                write!(f, "movie {movie_id} has no genres")
            }
            DataError::EmptyHistory { user_id } => write!(f, "user {user_id} has no items"),
            DataError::BadFractions { sum } => {
                write!(f, "split fractions must sum to 1, got {sum}")
            }
            DataError::BadSynthConfig { msg } => write!(f, "synthetic data config: {msg}"),
            DataError::Io { path, msg } => write!(f, "{path}: {msg}"),
            DataError::Encode { msg } => write!(f, "encode: {msg}"),
        }
    }
}

impl std::error::Error for DataError {}

/// Ratings live on the half-star grid 0.5..=5.0 and are stored as integer
/// half-stars (1..=10), so aggregation and boundary comparisons are exact
/// integer arithmetic — a mean is "greater than 3.5" iff `2·sum > 7·count`
/// with no floating-point reading of the boundary.
pub type HalfStars = u8;

/// Parse a star value (e.g. 4.0, 3.5) into half-stars, rejecting anything off
/// the grid.
pub fn half_stars_from_value(value: f64) -> Result<HalfStars, DataError> {
    let doubled = value * 2.0;
    let rounded = doubled.round();
    if (doubled - rounded).abs() > 1e-9 || !(1.0..=10.0).contains(&rounded) {
        return Err(DataError::BadRating { value });
    }
    Ok(rounded as HalfStars)
}

/// Format half-stars with minimal decimals: 8 → "4", 7 → "3.5".
pub fn half_stars_to_text(half: HalfStars) -> String {
    if half % 2 == 0 {
        format!("{}", half / 2)
    } else {
        format!("{}.5", half / 2)
    }
}

/// Star value as a float (display/diagnostics only; logic stays integer).
pub fn half_stars_to_value(half: HalfStars) -> f64 {
    half as f64 / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovieRecord {
    pub movie_id: String,
    pub title: String,
    /// Nonempty, all members of the run's genre vocabulary.
    pub genres: Vec<String>,
    /// May be empty (not every movie has one).
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryItem {
    pub movie: MovieRecord,
    /// Integer half-stars, 1..=10.
    pub rating: HalfStars,
    pub timestamp: i64,
}

impl HistoryItem {
    pub fn rating_text(&self) -> String {
        half_stars_to_text(self.rating)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserHistory {
    pub user_id: String,
    /// Chronological, ascending by (timestamp, movie_id).
    pub items: Vec<HistoryItem>,
}

impl UserHistory {
    /// Restore the chronological invariant after construction.
    pub fn sort_items(&mut self) {
        self.items
            .sort_by(|a, b| (a.timestamp, &a.movie.movie_id).cmp(&(b.timestamp, &b.movie.movie_id)));
    }
}

/// Gold label for one user: up to three liked and three disliked genres plus
/// the canonical target sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceLabel {
    pub liked: Vec<String>,
    pub disliked: Vec<String>,
    pub target_text: String,
}

/// The run's genre name list, fixed order, unique names.
///
/// The movie pipeline requires exactly 19 names (MovieLens's genre count,
/// which the synthetic generator mirrors); scoring helpers accept any size so
/// small sub-vocabularies can be tested exhaustively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenreVocabulary {
    names: Vec<String>,
}

impl GenreVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self, DataError> {
        if names.is_empty() {
            return Err(DataError::EmptyGenreVocabulary);
        }
        let mut seen = BTreeSet::new();
        for n in &names {
            if !seen.insert(n.clone()) {
                return Err(DataError::DuplicateGenre { name: n.clone() });
            }
        }
        Ok(GenreVocabulary { names })
    }

    /// As `new`, additionally requiring the pipeline's exactly-19 invariant.
    pub fn new_pipeline(names: Vec<String>) -> Result<Self, DataError> {
        if names.len() != 19 {
            return Err(DataError::WrongGenreCount { got: names.len() });
        }
        Self::new(names)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}
