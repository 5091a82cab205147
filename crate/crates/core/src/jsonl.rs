//! Line-delimited JSON helpers.

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("line {line}: {source}")]
pub struct JsonlError {
    pub line: usize,
    #[source]
    pub source: serde_json::Error,
}

/// One compact JSON object per line, each line terminated by `\n`.
pub fn to_jsonl<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for row in rows {
        out.extend(to_line(row));
    }
    out
}

pub fn to_line<T: Serialize>(row: &T) -> Vec<u8> {
    let mut line = serde_json::to_vec(row).expect("serializable row");
    line.push(b'\n');
    line
}

/// Parses every non-blank line; line numbers in errors start at 1.
pub fn from_jsonl<T: DeserializeOwned>(bytes: &[u8]) -> Result<Vec<T>, JsonlError> {
    let mut rows = Vec::new();
    for (i, line) in bytes.split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        rows.push(serde_json::from_slice(line).map_err(|source| JsonlError { line: i + 1, source })?);
    }
    Ok(rows)
}
