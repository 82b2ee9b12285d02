//! Dataset directory layout: one directory holding the genre vocabulary and
//! the train/dev/test user shards as JSON Lines.
//!
//! - `genres.txt` — one genre name per line, vocabulary order
//! - `train.jsonl` / `dev.jsonl` / `test.jsonl` — one `UserHistory` per line,
//!   sorted by `user_id`
//! - `latents.jsonl` — optional; one `LatentPreference` per line when the
//!   dataset came from the synthetic generator

use super::synth::LatentPreference;
use super::{DataError, GenreVocabulary, UserHistory};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Which shard of a dataset directory to load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.jsonl",
            Split::Dev => "dev.jsonl",
            Split::Test => "test.jsonl",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train|dev|test)")),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> DataError {
    DataError::Io { path: path.display().to_string(), msg: e.to_string() }
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<(), DataError> {
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, row).map_err(|e| io_err(path, e))?;
        buf.push(b'\n');
    }
    atomic_write(path, &buf)
}

/// Write bytes via a sibling temp file and rename, so readers never see a
/// half-written shard.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let parent = path.parent().ok_or_else(|| io_err(path, "path has no parent directory"))?;
    let tmp = parent.join(format!(
        ".{}.tmp-{}",
        path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        std::process::id()
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
    f.sync_all().map_err(|e| io_err(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, DataError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: T = serde_json::from_str(&line).map_err(|e| DataError::MalformedRow {
            path: path.display().to_string(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

fn sorted_by_user(mut users: Vec<UserHistory>) -> Vec<UserHistory> {
    users.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    users
}

/// Write a complete dataset directory. Any existing shard files are replaced.
pub fn write_dataset(
    dir: &Path,
    vocabulary: &GenreVocabulary,
    train: Vec<UserHistory>,
    dev: Vec<UserHistory>,
    test: Vec<UserHistory>,
    latents: Option<&[LatentPreference]>,
) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut genres = String::new();
    for name in vocabulary.names() {
        genres.push_str(name);
        genres.push('\n');
    }
    atomic_write(&dir.join("genres.txt"), genres.as_bytes())?;
    write_jsonl(&dir.join(Split::Train.file_name()), &sorted_by_user(train))?;
    write_jsonl(&dir.join(Split::Dev.file_name()), &sorted_by_user(dev))?;
    write_jsonl(&dir.join(Split::Test.file_name()), &sorted_by_user(test))?;
    if let Some(latents) = latents {
        write_jsonl(&dir.join("latents.jsonl"), latents)?;
    }
    Ok(())
}

pub fn load_vocab(dir: &Path) -> Result<GenreVocabulary, DataError> {
    let path = dir.join("genres.txt");
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let names: Vec<String> =
        text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect();
    GenreVocabulary::new_pipeline(names)
}

pub fn load_split(dir: &Path, split: Split) -> Result<Vec<UserHistory>, DataError> {
    read_jsonl(&dir.join(split.file_name()))
}

pub fn load_latents(dir: &Path) -> Result<Option<Vec<LatentPreference>>, DataError> {
    let path = dir.join("latents.jsonl");
    if !path.exists() {
        return Ok(None);
    }
    read_jsonl(&path).map(Some)
}
