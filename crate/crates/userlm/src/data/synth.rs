//! Synthetic corpus generator: a desk-scale stand-in for the full movie
//! review dataset.
//!
//! Every synthetic user carries latent liked/disliked genre sets. Movies are
//! single-genre and their descriptions contain genre-specific motif tokens, so
//! an item's text is informative about its genre. Ratings are drawn from the
//! latent preference: liked genres rate high (4–5 stars), disliked rate low
//! (1–2), everything else rates mid (3–3.5). The mid band sits exactly on the
//! strict label boundaries (a mean in [3, 3.5] is never >3.5 nor <3), so with
//! `noise = 0` the label rules recover the latent sets exactly. Genre
//! evidence is shuffled uniformly across each history, which makes short
//! truncations genuinely lossy — the property the history-length ablation
//! depends on.

use super::{DataError, GenreVocabulary, HistoryItem, MovieRecord, UserHistory};
use crate::rng::RngState;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_movies: usize,
    /// Bounds on items per user. At least 18 so three liked and three
    /// disliked genres can each receive their three guaranteed items.
    pub min_items: usize,
    pub max_items: usize,
    /// Probability that an item's rating polarity is flipped.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { n_users: 256, n_movies: 120, min_items: 24, max_items: 40, noise: 0.0, seed: 42 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::BadSynthConfig { msg });
        if self.n_users == 0 {
            return bad("n_users must be positive".into());
        }
        if self.n_movies < GENRE_COUNT {
            return bad(format!("n_movies = {} below genre count {GENRE_COUNT}", self.n_movies));
        }
        if self.min_items < 18 {
            return bad(format!(
                "min_items = {} too small: 3 liked + 3 disliked genres need 18 guaranteed items",
                self.min_items
            ));
        }
        if self.max_items < self.min_items {
            return bad(format!("max_items {} < min_items {}", self.max_items, self.min_items));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return bad(format!("noise {} outside [0, 1]", self.noise));
        }
        Ok(())
    }
}

/// Ground-truth latent preference emitted alongside the corpus (diagnostics;
/// training never reads it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPreference {
    pub user_id: String,
    pub liked: Vec<String>,
    pub disliked: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub vocabulary: GenreVocabulary,
    pub movies: Vec<MovieRecord>,
    pub users: Vec<UserHistory>,
    pub latents: Vec<LatentPreference>,
}

pub const GENRE_COUNT: usize = 19;

/// The synthetic genre vocabulary: G01..G19.
pub fn synthetic_genres() -> GenreVocabulary {
    let names = (1..=GENRE_COUNT).map(|i| format!("G{i:02}")).collect();
    GenreVocabulary::new_pipeline(names).expect("19 unique names")
}

const ADJECTIVES: [&str; 12] = [
    "Crimson", "Silent", "Golden", "Broken", "Hidden", "Electric", "Frozen", "Restless",
    "Velvet", "Iron", "Paper", "Midnight",
];

const NOUNS: [&str; 12] = [
    "Falcon", "Harbor", "Garden", "Mirror", "Engine", "Voyage", "Letter", "Orchard",
    "Signal", "Bridge", "Lantern", "Archive",
];

/// Per-genre motif token planted in descriptions so text carries the genre.
fn motif(genre_index: usize) -> String {
    format!("motif{:02}", genre_index + 1)
}

// Half-star rating pools per polarity. Liked means land in [4, 5] (> 3.5),
// disliked in [1, 2] (< 3), neutral in [3, 3.5] (on neither side of a strict
// boundary).
const LIKED_HALF_STARS: [u8; 3] = [8, 9, 10];
const DISLIKED_HALF_STARS: [u8; 3] = [2, 3, 4];
const NEUTRAL_HALF_STARS: [u8; 2] = [6, 7];

fn pick<T: Copy>(rng: &mut RngState, pool: &[T]) -> T {
    pool[rng.next_below(pool.len())]
}

/// Sample `count` distinct indices from 0..n.
fn sample_distinct(rng: &mut RngState, n: usize, count: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut all);
    all.truncate(count);
    all
}

fn make_movies(rng: &mut RngState, cfg: &SynthConfig, vocab: &GenreVocabulary) -> Vec<MovieRecord> {
    (0..cfg.n_movies)
        .map(|i| {
            let genre_idx = i % GENRE_COUNT;
            let genre = vocab.names()[genre_idx].clone();
            let adj = pick(rng, &ADJECTIVES);
            let noun = pick(rng, &NOUNS);
            let m = motif(genre_idx);
            let description = format!(
                "A {} tale of {m} told through the {}. Viewers who enjoy {m} themes call it a defining {m} picture.",
                adj.to_lowercase(),
                noun.to_lowercase(),
            );
            MovieRecord {
                movie_id: format!("m{:04}", i + 1),
                title: format!("The {adj} {noun} {:04}", i + 1),
                genres: vec![genre],
                description,
            }
        })
        .collect()
}

#[derive(Clone, Copy, PartialEq)]
enum Polarity {
    Liked,
    Disliked,
    Neutral,
}

fn draw_rating(rng: &mut RngState, polarity: Polarity, noise: f64) -> u8 {
    let mut polarity = polarity;
    if noise > 0.0 && rng.next_f64() < noise {
        polarity = match polarity {
            Polarity::Liked => Polarity::Disliked,
            Polarity::Disliked => Polarity::Liked,
            Polarity::Neutral => {
                if rng.next_f64() < 0.5 {
                    Polarity::Liked
                } else {
                    Polarity::Disliked
                }
            }
        };
    }
    match polarity {
        Polarity::Liked => pick(rng, &LIKED_HALF_STARS),
        Polarity::Disliked => pick(rng, &DISLIKED_HALF_STARS),
        Polarity::Neutral => pick(rng, &NEUTRAL_HALF_STARS),
    }
}

/// Generate the corpus. Deterministic in `cfg` (including `cfg.seed`).
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthOutput, DataError> {
    cfg.validate()?;
    let vocab = synthetic_genres();
    let mut rng = RngState::from_seed(cfg.seed);
    let movies = make_movies(&mut rng, cfg, &vocab);

    // Movie indices grouped by genre for guaranteed-item injection.
    let mut by_genre: Vec<Vec<usize>> = vec![Vec::new(); GENRE_COUNT];
    for (i, m) in movies.iter().enumerate() {
        let g = vocab.index_of(&m.genres[0]).expect("synthetic genre in vocab");
        by_genre[g].push(i);
    }

    let mut users = Vec::with_capacity(cfg.n_users);
    let mut latents = Vec::with_capacity(cfg.n_users);
    for u in 0..cfg.n_users {
        let user_id = format!("u{:05}", u + 1);

        // Latent preference: 2–3 liked genres, 1–3 disliked, disjoint.
        let n_liked = 2 + rng.next_below(2);
        let n_disliked = 1 + rng.next_below(3);
        let chosen = sample_distinct(&mut rng, GENRE_COUNT, n_liked + n_disliked);
        let liked_idx = &chosen[..n_liked];
        let disliked_idx = &chosen[n_liked..];
        let polarity_of = |gi: usize| {
            if liked_idx.contains(&gi) {
                Polarity::Liked
            } else if disliked_idx.contains(&gi) {
                Polarity::Disliked
            } else {
                Polarity::Neutral
            }
        };

        let n_items = cfg.min_items + rng.next_below(cfg.max_items - cfg.min_items + 1);

        // Guaranteed evidence: three items per latent genre (the label rule's
        // minimum rating count), then uniform filler up to n_items.
        let mut movie_picks: Vec<usize> = Vec::with_capacity(n_items);
        for &gi in chosen.iter() {
            let pool = &by_genre[gi];
            let order = sample_distinct(&mut rng, pool.len(), pool.len().min(3));
            for j in 0..3 {
                movie_picks.push(pool[order[j % order.len()]]);
            }
        }
        while movie_picks.len() < n_items {
            movie_picks.push(rng.next_below(movies.len()));
        }

        // Shuffle so genre evidence spreads uniformly over time; timestamps
        // then follow the shuffled order.
        rng.shuffle(&mut movie_picks);
        let items: Vec<HistoryItem> = movie_picks
            .iter()
            .enumerate()
            .map(|(pos, &mi)| {
                let movie = movies[mi].clone();
                let gi = vocab.index_of(&movie.genres[0]).expect("in vocab");
                let rating = draw_rating(&mut rng, polarity_of(gi), cfg.noise);
                HistoryItem { movie, rating, timestamp: 1_000 + pos as i64 * 86_400 }
            })
            .collect();

        let mut history = UserHistory { user_id: user_id.clone(), items };
        history.sort_items();
        users.push(history);

        let mut liked: Vec<String> =
            liked_idx.iter().map(|&gi| vocab.names()[gi].clone()).collect();
        let mut disliked: Vec<String> =
            disliked_idx.iter().map(|&gi| vocab.names()[gi].clone()).collect();
        liked.sort();
        disliked.sort();
        latents.push(LatentPreference { user_id, liked, disliked });
    }

    Ok(SynthOutput { vocabulary: vocab, movies, users, latents })
}
