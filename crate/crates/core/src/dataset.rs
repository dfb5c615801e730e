//! Question/SQL datasets in the Spider format.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed dataset {path}: {source}")]
    Format {
        path: PathBuf,
        source: serde_json::Error,
    },
}

/// One dataset entry. `id` is the position in the source file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: usize,
    pub db_id: String,
    pub question: String,
    /// Gold SQL, absent for unlabeled inference inputs.
    pub query: Option<String>,
}

#[derive(Deserialize)]
struct RawSample {
    db_id: String,
    question: String,
    #[serde(default)]
    query: Option<String>,
}

/// Reads a JSON list of `{db_id, question, query}` objects; other fields are ignored.
pub fn load_dataset(path: &Path) -> Result<Vec<Sample>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dataset(&text).map_err(|source| DatasetError::Format {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_dataset(text: &str) -> Result<Vec<Sample>, serde_json::Error> {
    let raw: Vec<RawSample> = serde_json::from_str(text)?;
    Ok(raw
        .into_iter()
        .enumerate()
        .map(|(id, r)| Sample {
            id,
            db_id: r.db_id,
            question: r.question,
            query: r.query,
        })
        .collect())
}
