//! CSV ingestion: join ratings, movie metadata, and optional descriptions
//! into per-user chronological histories.
//!
//! File formats (UTF-8, header row):
//! - ratings CSV: `user_id,movie_id,rating,timestamp`
//! - movies CSV: `movie_id,title,genres` with genres pipe-separated
//! - descriptions CSV: `title,description`, joined on exact title
//!
//! Malformed rows are hard errors with line numbers; rows referencing unknown
//! movies and exact duplicate (user, movie, timestamp) triples are skipped
//! and counted.

use super::{
    half_stars_from_value, DataError, GenreVocabulary, HistoryItem, MovieRecord, UserHistory,
};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

/// What ingestion did, beyond the histories themselves.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IngestReport {
    pub users: usize,
    pub ratings_kept: usize,
    /// Ratings whose movie_id was absent from the movies file.
    pub skipped_unknown_movie: usize,
    /// Exact duplicate (user, movie, timestamp) rows dropped (first kept).
    pub duplicate_rows: usize,
    /// Movies with no description-file match (description left empty).
    pub missing_descriptions: usize,
}

#[derive(Debug)]
pub struct IngestOutput {
    pub vocabulary: GenreVocabulary,
    pub users: Vec<UserHistory>,
    pub report: IngestReport,
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>, DataError> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| DataError::Io { path: path.display().to_string(), msg: e.to_string() })
}

fn row_error(path: &Path, line: usize, msg: impl Into<String>) -> DataError {
    DataError::MalformedRow { path: path.display().to_string(), line, msg: msg.into() }
}

/// Read the movies file and derive the genre vocabulary (the observed genre
/// set, sorted; must come out to exactly 19 names).
fn read_movies(path: &Path) -> Result<(HashMap<String, MovieRecord>, GenreVocabulary), DataError> {
    let mut reader = csv_reader(path)?;
    let mut movies = HashMap::new();
    let mut genres = BTreeSet::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2; // header is line 1
        let record = record.map_err(|e| row_error(path, line, e.to_string()))?;
        if record.len() != 3 {
            return Err(row_error(path, line, format!("expected 3 columns, got {}", record.len())));
        }
        let movie_id = record[0].trim().to_string();
        let title = record[1].trim().to_string();
        let genre_list: Vec<String> = record[2]
            .split('|')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        if movie_id.is_empty() || title.is_empty() {
            return Err(row_error(path, line, "empty movie_id or title"));
        }
        if genre_list.is_empty() {
            return Err(DataError::EmptyGenres { movie_id });
        }
        for g in &genre_list {
            genres.insert(g.clone());
        }
        movies.insert(
            movie_id.clone(),
            MovieRecord { movie_id, title, genres: genre_list, description: String::new() },
        );
    }
    let vocabulary = GenreVocabulary::new_pipeline(genres.into_iter().collect())?;
    Ok((movies, vocabulary))
}

fn read_descriptions(path: &Path) -> Result<HashMap<String, String>, DataError> {
    let mut reader = csv_reader(path)?;
    let mut map = HashMap::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| row_error(path, line, e.to_string()))?;
        if record.len() != 2 {
            return Err(row_error(path, line, format!("expected 2 columns, got {}", record.len())));
        }
        map.insert(record[0].trim().to_string(), record[1].to_string());
    }
    Ok(map)
}

/// Ingest the three files into chronological per-user histories plus the
/// observed genre vocabulary.
pub fn ingest(
    ratings_path: &Path,
    movies_path: &Path,
    descriptions_path: Option<&Path>,
) -> Result<IngestOutput, DataError> {
    let (mut movies, vocabulary) = read_movies(movies_path)?;
    let mut report = IngestReport::default();

    if let Some(desc_path) = descriptions_path {
        let descriptions = read_descriptions(desc_path)?;
        for movie in movies.values_mut() {
            match descriptions.get(&movie.title) {
                Some(d) => movie.description = d.clone(),
                None => report.missing_descriptions += 1,
            }
        }
    } else {
        report.missing_descriptions = movies.len();
    }

    let mut reader = csv_reader(ratings_path)?;
    let mut per_user: BTreeMap<String, Vec<HistoryItem>> = BTreeMap::new();
    let mut seen: HashSet<(String, String, i64)> = HashSet::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| row_error(ratings_path, line, e.to_string()))?;
        if record.len() != 4 {
            return Err(row_error(
                ratings_path,
                line,
                format!("expected 4 columns, got {}", record.len()),
            ));
        }
        let user_id = record[0].trim().to_string();
        let movie_id = record[1].trim().to_string();
        let rating_value: f64 = record[2]
            .trim()
            .parse()
            .map_err(|_| row_error(ratings_path, line, format!("bad rating {:?}", &record[2])))?;
        let rating = half_stars_from_value(rating_value)
            .map_err(|e| row_error(ratings_path, line, e.to_string()))?;
        let timestamp: i64 = record[3]
            .trim()
            .parse()
            .map_err(|_| row_error(ratings_path, line, format!("bad timestamp {:?}", &record[3])))?;
        if user_id.is_empty() {
            return Err(row_error(ratings_path, line, "empty user_id"));
        }
        let Some(movie) = movies.get(&movie_id) else {
            report.skipped_unknown_movie += 1;
            continue;
        };
        if !seen.insert((user_id.clone(), movie_id.clone(), timestamp)) {
            report.duplicate_rows += 1;
            continue;
        }
        per_user
            .entry(user_id)
            .or_default()
            .push(HistoryItem { movie: movie.clone(), rating, timestamp });
        report.ratings_kept += 1;
    }

    let users: Vec<UserHistory> = per_user
        .into_iter()
        .map(|(user_id, items)| {
            let mut u = UserHistory { user_id, items };
            u.sort_items();
            u
        })
        .collect();
    report.users = users.len();
    Ok(IngestOutput { vocabulary, users, report })
}
