//! Tiny key-value text manifests used by plan, checkpoint and report files.
//!
//! One `key=value` pair per line; `#` starts a comment; keys are unique.
//! Values are written with Rust's shortest round-trip float formatting, so
//! parsing a written file recovers every bit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    entries: BTreeMap<String, String>,
    origin: PathBuf,
}

impl Manifest {
    pub fn new() -> Self {
        Manifest::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::parse(&self.origin, format!("missing key {key:?}")))
    }

    pub fn get_opt(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get_parsed<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse().map_err(|_| {
            Error::parse(
                &self.origin,
                format!("key {key:?} has unparseable value {raw:?}"),
            )
        })
    }

    pub fn parse_str(text: &str, origin: impl Into<PathBuf>) -> Result<Self> {
        let origin = origin.into();
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::parse(&origin, format!("line {}: expected key=value", lineno + 1))
            })?;
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::parse(
                    &origin,
                    format!("line {}: duplicate key {key:?}", lineno + 1),
                ));
            }
        }
        Ok(Manifest { entries, origin })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Joins values with commas; the empty list becomes the empty string.
pub fn join_list<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items
        .into_iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Inverse of [`join_list`] for parseable element types.
pub fn split_list<T: FromStr>(raw: &str) -> std::result::Result<Vec<T>, T::Err> {
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',').map(str::parse).collect()
}
