//! Line-based `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored; keys are lower-cased
//! and `-` is read as `_`, so keys can be copied from command-line flags.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse_str(text: &str, origin: &Path) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            message: format!("expected `key = value`, got {line:?}"),
        })?;
        let key = k.trim().to_ascii_lowercase().replace('-', "_");
        if key.is_empty() {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message: "empty key".into(),
            });
        }
        out.push(Entry {
            line: i + 1,
            key,
            value: v.trim().to_string(),
        });
    }
    Ok(out)
}

pub fn parse_file(path: &Path) -> Result<Vec<Entry>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_str(&text, path)
}
