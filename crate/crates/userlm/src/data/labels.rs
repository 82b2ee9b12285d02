//! Gold preference labels: aggregate each user's genre ratings over the FULL
//! history and pick up to three liked and three disliked genres.
//!
//! Rules (all boundaries strict, all arithmetic exact integers):
//! - a genre counts only with at least three ratings;
//! - liked    ⇔ mean rating > 3.5   ⇔ sum_half_stars > 7·count;
//! - disliked ⇔ mean rating < 3     ⇔ sum_half_stars < 6·count;
//! - liked ordered by (mean desc, count desc, name asc), disliked by
//!   (mean asc, count desc, name asc); comparisons of two means use
//!   cross-multiplication, never floating point.

use super::render::render_target;
use super::{PreferenceLabel, UserHistory};
use std::cmp::Ordering;
use std::collections::BTreeMap;

/// Minimum ratings a genre needs before it is considered at all.
pub const MIN_RATINGS_PER_GENRE: u64 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
struct GenreStat {
    name: String,
    /// Sum of half-star ratings (2x stars), exact.
    sum2: u64,
    count: u64,
}

impl GenreStat {
    /// mean > 3.5 stars ⇔ sum2/(2n) > 3.5 ⇔ sum2 > 7n
    fn is_liked(&self) -> bool {
        self.sum2 > 7 * self.count
    }

    /// mean < 3 stars ⇔ sum2/(2n) < 3 ⇔ sum2 < 6n
    fn is_disliked(&self) -> bool {
        self.sum2 < 6 * self.count
    }

    /// Compare means exactly: sum2_a/count_a vs sum2_b/count_b via
    /// cross-multiplication (u128 to stay exact for any history size).
    fn cmp_mean(&self, other: &GenreStat) -> Ordering {
        (self.sum2 as u128 * other.count as u128).cmp(&(other.sum2 as u128 * self.count as u128))
    }
}

fn genre_stats(history: &UserHistory) -> Vec<GenreStat> {
    let mut map: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for item in &history.items {
        for genre in &item.movie.genres {
            let entry = map.entry(genre.as_str()).or_insert((0, 0));
            entry.0 += item.rating as u64;
            entry.1 += 1;
        }
    }
    map.into_iter()
        .map(|(name, (sum2, count))| GenreStat { name: name.to_string(), sum2, count })
        .collect()
}

/// Build the gold label from a user's full history. Empty liked/disliked
/// sets are valid; the target sentence covers all four shapes.
pub fn build_preference_labels(history: &UserHistory) -> PreferenceLabel {
    let stats: Vec<GenreStat> = genre_stats(history)
        .into_iter()
        .filter(|s| s.count >= MIN_RATINGS_PER_GENRE)
        .collect();

    let mut liked: Vec<&GenreStat> = stats.iter().filter(|s| s.is_liked()).collect();
    liked.sort_by(|a, b| {
        b.cmp_mean(a) // mean desc
            .then(b.count.cmp(&a.count)) // count desc
            .then(a.name.cmp(&b.name)) // name asc
    });
    liked.truncate(3);

    let mut disliked: Vec<&GenreStat> = stats.iter().filter(|s| s.is_disliked()).collect();
    disliked.sort_by(|a, b| {
        a.cmp_mean(b) // mean asc
            .then(b.count.cmp(&a.count)) // count desc
            .then(a.name.cmp(&b.name)) // name asc
    });
    disliked.truncate(3);

    let liked: Vec<String> = liked.into_iter().map(|s| s.name.clone()).collect();
    let disliked: Vec<String> = disliked.into_iter().map(|s| s.name.clone()).collect();
    let target_text = render_target(&liked, &disliked);
    PreferenceLabel { liked, disliked, target_text }
}

/// Keep only users with at least `min_views` recorded items.
pub fn filter_min_views(users: Vec<UserHistory>, min_views: usize) -> Vec<UserHistory> {
    users.into_iter().filter(|u| u.items.len() >= min_views).collect()
}

/// Keep the `p` most recent items, preserving chronological order. Labels are
/// always computed from the full history BEFORE truncation — truncation only
/// shrinks what the model sees.
pub fn truncate_history(history: &UserHistory, p: usize) -> UserHistory {
    let start = history.items.len().saturating_sub(p);
    UserHistory { user_id: history.user_id.clone(), items: history.items[start..].to_vec() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{HistoryItem, MovieRecord};

    /// History from (genre, star-rating) pairs, one single-genre movie each.
    fn history(pairs: &[(&str, f64)]) -> UserHistory {
        let items = pairs
            .iter()
            .enumerate()
            .map(|(i, (genre, stars))| HistoryItem {
                movie: MovieRecord {
                    movie_id: format!("m{i}"),
                    title: format!("Movie {i}"),
                    genres: vec![genre.to_string()],
                    description: String::new(),
                },
                rating: crate::data::half_stars_from_value(*stars).unwrap(),
                timestamp: i as i64,
            })
            .collect();
        UserHistory { user_id: "u".into(), items }
    }

    #[test]
    fn hand_aggregation_case() {
        // Action {5,5,4} mean 4.67 liked; Comedy {4,4,4} mean 4 liked;
        // Horror {1,2,2} mean 1.67 disliked; Drama {3,3,3} mean 3.0 excluded
        // (not strictly below 3).
        let h = history(&[
            ("Action", 5.0),
            ("Action", 5.0),
            ("Action", 4.0),
            ("Comedy", 4.0),
            ("Comedy", 4.0),
            ("Comedy", 4.0),
            ("Horror", 1.0),
            ("Horror", 2.0),
            ("Horror", 2.0),
            ("Drama", 3.0),
            ("Drama", 3.0),
            ("Drama", 3.0),
        ]);
        let label = build_preference_labels(&h);
        assert_eq!(label.liked, vec!["Action", "Comedy"]);
        assert_eq!(label.disliked, vec!["Horror"]);
    }

    #[test]
    fn fewer_than_three_ratings_excludes_a_genre() {
        let h = history(&[("Action", 5.0), ("Action", 5.0)]);
        let label = build_preference_labels(&h);
        assert!(label.liked.is_empty());
        assert!(label.disliked.is_empty());
        assert_eq!(label.target_text, "The user has no strong genre preferences");
    }

    #[test]
    fn exactly_three_ratings_is_enough() {
        let h = history(&[("Action", 5.0), ("Action", 5.0), ("Action", 5.0)]);
        assert_eq!(build_preference_labels(&h).liked, vec!["Action"]);
    }

    #[test]
    fn mean_exactly_three_point_five_is_neither() {
        let h = history(&[("Action", 3.5), ("Action", 3.5), ("Action", 3.5)]);
        let label = build_preference_labels(&h);
        assert!(label.liked.is_empty());
        assert!(label.disliked.is_empty());
    }

    #[test]
    fn mean_exactly_three_is_not_disliked() {
        let h = history(&[("Action", 3.0), ("Action", 3.0), ("Action", 3.0)]);
        let label = build_preference_labels(&h);
        assert!(label.disliked.is_empty());
    }

    #[test]
    fn mean_just_above_boundary_is_liked() {
        // {3.5, 3.5, 4.0}: sum2 = 7+7+8 = 22 > 7*3 = 21.
        let h = history(&[("Action", 3.5), ("Action", 3.5), ("Action", 4.0)]);
        assert_eq!(build_preference_labels(&h).liked, vec!["Action"]);
    }

    #[test]
    fn mean_just_below_boundary_is_disliked() {
        // {3.0, 3.0, 2.5}: sum2 = 6+6+5 = 17 < 6*3 = 18.
        let h = history(&[("Action", 3.0), ("Action", 3.0), ("Action", 2.5)]);
        assert_eq!(build_preference_labels(&h).disliked, vec!["Action"]);
    }

    #[test]
    fn liked_sorted_by_mean_then_count_then_name() {
        // B mean 5.0; A mean 4.0 count 4; C mean 4.0 count 3 → [B, A, C].
        let h = history(&[
            ("B", 5.0),
            ("B", 5.0),
            ("B", 5.0),
            ("A", 4.0),
            ("A", 4.0),
            ("A", 4.0),
            ("A", 4.0),
            ("C", 4.0),
            ("C", 4.0),
            ("C", 4.0),
        ]);
        assert_eq!(build_preference_labels(&h).liked, vec!["B", "A", "C"]);
    }

    #[test]
    fn liked_name_breaks_exact_ties() {
        let h = history(&[
            ("Z", 4.0),
            ("Z", 4.0),
            ("Z", 4.0),
            ("A", 4.0),
            ("A", 4.0),
            ("A", 4.0),
        ]);
        assert_eq!(build_preference_labels(&h).liked, vec!["A", "Z"]);
    }

    #[test]
    fn disliked_sorted_worst_first() {
        // X mean 1.0, Y mean 2.0 → [X, Y].
        let h = history(&[
            ("Y", 2.0),
            ("Y", 2.0),
            ("Y", 2.0),
            ("X", 1.0),
            ("X", 1.0),
            ("X", 1.0),
        ]);
        assert_eq!(build_preference_labels(&h).disliked, vec!["X", "Y"]);
    }

    #[test]
    fn top_three_cap_applies_to_both_sets() {
        let h = history(&[
            ("A", 5.0), ("A", 5.0), ("A", 5.0),
            ("B", 4.5), ("B", 4.5), ("B", 4.5),
            ("C", 4.0), ("C", 4.0), ("C", 4.0),
            ("D", 4.0), ("D", 4.0), ("D", 4.0),
            ("E", 1.0), ("E", 1.0), ("E", 1.0),
            ("F", 1.5), ("F", 1.5), ("F", 1.5),
            ("G", 2.0), ("G", 2.0), ("G", 2.0),
            ("H", 2.5), ("H", 2.5), ("H", 2.5),
        ]);
        let label = build_preference_labels(&h);
        assert_eq!(label.liked, vec!["A", "B", "C"]);
        assert_eq!(label.disliked, vec!["E", "F", "G"]);
    }

    #[test]
    fn multi_genre_movies_count_toward_every_genre() {
        let mut h = history(&[]);
        for i in 0..3 {
            h.items.push(HistoryItem {
                movie: MovieRecord {
                    movie_id: format!("m{i}"),
                    title: "X".into(),
                    genres: vec!["Action".into(), "Crime".into()],
                    description: String::new(),
                },
                rating: 10,
                timestamp: i,
            });
        }
        let label = build_preference_labels(&h);
        assert_eq!(label.liked, vec!["Action", "Crime"]);
    }

    #[test]
    fn labels_are_order_invariant() {
        let mut h = history(&[
            ("Action", 5.0),
            ("Action", 4.0),
            ("Action", 5.0),
            ("Horror", 1.0),
            ("Horror", 2.0),
            ("Horror", 1.5),
        ]);
        let before = build_preference_labels(&h);
        h.items.reverse();
        let after = build_preference_labels(&h);
        assert_eq!(before, after);
    }

    #[test]
    fn cross_multiplied_means_avoid_float_ties() {
        // A: {4, 4, 4, 4.5} sum2 33, n 4 → mean 4.125.
        // B: {4, 4, 4.5} sum2 25, n 3 → mean 4.1666...
        // B's mean is greater: 25·4 = 100 > 33·3 = 99.
        let h = history(&[
            ("A", 4.0),
            ("A", 4.0),
            ("A", 4.0),
            ("A", 4.5),
            ("B", 4.0),
            ("B", 4.0),
            ("B", 4.5),
        ]);
        assert_eq!(build_preference_labels(&h).liked, vec!["B", "A"]);
    }

    #[test]
    fn filter_min_views_is_inclusive_at_the_boundary() {
        let mut users = Vec::new();
        for n in [19usize, 20, 21] {
            let pairs: Vec<(&str, f64)> = (0..n).map(|_| ("Action", 4.0)).collect();
            let mut u = history(&pairs);
            u.user_id = format!("u{n}");
            users.push(u);
        }
        let kept = filter_min_views(users, 20);
        let ids: Vec<&str> = kept.iter().map(|u| u.user_id.as_str()).collect();
        assert_eq!(ids, ["u20", "u21"]);
        assert!(filter_min_views(vec![], 20).is_empty());
    }

    #[test]
    fn truncate_keeps_most_recent_preserving_order() {
        let h = history(&[("A", 4.0), ("B", 4.0), ("C", 4.0), ("D", 4.0)]);
        let t = truncate_history(&h, 2);
        let genres: Vec<&str> =
            t.items.iter().map(|i| i.movie.genres[0].as_str()).collect();
        assert_eq!(genres, ["C", "D"]);
        assert_eq!(truncate_history(&h, 10).items.len(), 4);
        assert_eq!(truncate_history(&h, 0).items.len(), 0);
    }

    #[test]
    fn truncation_never_changes_labels() {
        let h = history(&[
            ("Action", 5.0),
            ("Action", 5.0),
            ("Action", 5.0),
            ("Horror", 1.0),
            ("Horror", 1.0),
            ("Horror", 1.0),
        ]);
        let full_label = build_preference_labels(&h);
        // The label is a function of the full history; the truncated view is
        // only the model input. Recomputing on the truncation would differ —
        // that is exactly why labels are built first.
        let t = truncate_history(&h, 2);
        assert_eq!(t.items.len(), 2);
        assert_eq!(full_label.liked, vec!["Action"]);
        assert_eq!(full_label.disliked, vec!["Horror"]);
    }
}
