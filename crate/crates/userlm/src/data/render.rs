//! Text templates: history-item segment rendering and the target sentence.
//!
//! These strings are wire-format contracts shared by the embedder, the
//! text-history baseline, the synthetic generator, and the verbalizer, so the
//! templates live in exactly one place.

use super::{HistoryItem, MovieRecord};

/// The fixed task instruction (the query X). The source material leaves the
/// instruction wording open; this sentence is the crate's canonical choice.
pub const INSTRUCTION: &str =
    "Given the user's movie watching history, what movie genres does the user like and dislike?";

/// Neutral target sentence when a user has neither liked nor disliked genres.
pub const NEUTRAL_TARGET: &str = "The user has no strong genre preferences";

/// `The movie {movie_title} is listed with genres {genres}` with genres
/// joined by ", ".
pub fn render_title_genre(movie: &MovieRecord) -> String {
    format!("The movie {} is listed with genres {}", movie.title, movie.genres.join(", "))
}

/// `The movie is rated with {rating} stars` with minimal decimals (4 not 4.0).
pub fn render_rating(item: &HistoryItem) -> String {
    format!("The movie is rated with {} stars", item.rating_text())
}

/// The three segment texts in fixed order: (title+genre, rating, description).
/// The description passes through verbatim and may be empty.
pub fn render_history_item(item: &HistoryItem) -> (String, String, String) {
    (render_title_genre(&item.movie), render_rating(item), item.movie.description.clone())
}

/// One item as a single string for the text-history baseline: the nonempty
/// segments joined by ". ".
pub fn render_item_text(item: &HistoryItem) -> String {
    let (tg, rating, desc) = render_history_item(item);
    let mut parts = vec![tg, rating];
    if !desc.is_empty() {
        parts.push(desc);
    }
    parts.join(". ")
}

/// The target sentence for a (liked, disliked) pair of genre lists.
///
/// Both nonempty: `The user likes to watch movies with genres {liked} and
/// doesn't like to watch movies with genres {disliked}`. One empty: the
/// corresponding clause alone. Both empty: the neutral sentence.
pub fn render_target(liked: &[String], disliked: &[String]) -> String {
    let likes = |g: &[String]| format!("The user likes to watch movies with genres {}", g.join(", "));
    let dislikes_clause = |g: &[String]| {
        format!("doesn't like to watch movies with genres {}", g.join(", "))
    };
    match (liked.is_empty(), disliked.is_empty()) {
        (false, false) => format!("{} and {}", likes(liked), dislikes_clause(disliked)),
        (false, true) => likes(liked),
        (true, false) => format!("The user {}", dislikes_clause(disliked)),
        (true, true) => NEUTRAL_TARGET.to_string(),
    }
}
