//! Line-delimited JSON and small file helpers. Every error carries the path.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: line {line} (byte {offset}): {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        offset: u64,
        message: String,
    },
    #[error("{path}: {message}")]
    Encode { path: PathBuf, message: String },
}

impl FileError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        FileError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// One parsed line, or the error for that line.
pub struct Line<T> {
    pub line: usize,
    pub offset: u64,
    pub value: Result<T, String>,
}

/// Parse every non-blank line independently, keeping per-line failures.
pub fn read_jsonl_lenient<T: DeserializeOwned>(path: &Path) -> Result<Vec<Line<T>>, FileError> {
    let file = fs::File::open(path).map_err(|e| FileError::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut buf = String::new();
    let mut offset = 0u64;
    let mut line = 0usize;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(|e| FileError::io(path, e))?;
        if n == 0 {
            break;
        }
        line += 1;
        if !buf.trim().is_empty() {
            out.push(Line {
                line,
                offset,
                value: serde_json::from_str(buf.trim_end()).map_err(|e| e.to_string()),
            });
        }
        offset += n as u64;
    }
    Ok(out)
}

/// Parse every non-blank line, failing on the first bad one.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, FileError> {
    read_jsonl_lenient(path)?
        .into_iter()
        .map(|l| {
            l.value.map_err(|message| FileError::Parse {
                path: path.to_path_buf(),
                line: l.line,
                offset: l.offset,
                message,
            })
        })
        .collect()
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>, serde_json::Error> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Write through a sibling temp file and rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FileError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| FileError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| FileError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| FileError::io(path, e))?;
    tmp.persist(path).map_err(|e| FileError::io(path, e.error))?;
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), FileError> {
    let bytes = to_jsonl(items).map_err(|e| FileError::Encode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    write_atomic(path, &bytes)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FileError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| FileError::Encode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FileError> {
    let bytes = fs::read(path).map_err(|e| FileError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| FileError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        offset: 0,
        message: e.to_string(),
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String, FileError> {
    let bytes = fs::read(path).map_err(|e| FileError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// File-name-safe form of a problem id.
pub fn safe_file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}
