//! Flat `key = value` text used for model and training configs.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parsed key/value pairs. Blank lines and `#` comments are ignored.
#[derive(Clone, Debug, Default)]
pub struct KeyValues {
    path: std::path::PathBuf,
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, format!("line {}: expected key=value", lineno + 1)))?;
            let k = k.trim().to_string();
            if entries.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(Error::parse(path, format!("line {}: duplicate key '{k}'", lineno + 1)));
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    /// Removes and parses `key`, if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| Error::parse(&self.path, format!("key '{key}': {e}"))),
        }
    }

    /// Parses a `lo,hi` pair.
    pub fn take_range(&mut self, key: &str) -> Result<Option<[f64; 2]>> {
        let Some(v) = self.entries.remove(key) else {
            return Ok(None);
        };
        let parts: Vec<&str> = v.split(',').map(str::trim).collect();
        let bad = || Error::parse(&self.path, format!("key '{key}': expected lo,hi"));
        if parts.len() != 2 {
            return Err(bad());
        }
        let lo = parts[0].parse().map_err(|_| bad())?;
        let hi = parts[1].parse().map_err(|_| bad())?;
        Ok(Some([lo, hi]))
    }

    /// Fails if any key was not consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.keys().next() {
            None => Ok(()),
            Some(k) => Err(Error::parse(&self.path, format!("unknown key '{k}'"))),
        }
    }
}
