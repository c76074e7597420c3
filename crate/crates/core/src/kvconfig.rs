//! Flat `key = value` configuration files.
//!
//! Lines are `key = value`; `#` starts a comment. Vector values are written
//! as bracketed comma lists, e.g. `alpha = [-0.05, 0.0, 0.032]`.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
    read: RefCell<BTreeSet<String>>,
}

impl PartialEq for KvConfig {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", i + 1))
            })?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            entries.insert(key.to_string(), v.trim().to_string());
        }
        Ok(KvConfig {
            entries,
            read: RefCell::default(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        let v = self.entries.get(key)?;
        self.read.borrow_mut().insert(key.to_string());
        Some(v.as_str())
    }

    /// Keys present in the file that no lookup has asked for so far.
    pub fn unread_keys(&self) -> Vec<String> {
        let read = self.read.borrow();
        self.entries
            .keys()
            .filter(|k| !read.contains(*k))
            .cloned()
            .collect()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn set_vec(&mut self, key: &str, values: &[f64]) {
        let body: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        self.set(key, format!("[{}]", body.join(", ")));
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| Error::Config(format!("missing key {key}")))
    }

    pub fn get_vec(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(v) = self.raw(key) else {
            return Ok(None);
        };
        let inner = v
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| Error::Config(format!("{key}: expected [a, b, ...]")))?;
        if inner.trim().is_empty() {
            return Ok(Some(Vec::new()));
        }
        inner
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("{key}: bad number {s:?}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    pub fn require_vec(&self, key: &str) -> Result<Vec<f64>> {
        self.get_vec(key)?
            .ok_or_else(|| Error::Config(format!("missing key {key}")))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_scalars_vectors_and_comments() {
        let cfg = KvConfig::parse("# truth\nn = 600\nalpha = [-0.05, 0, 0.032] # links\nname = x\n")
            .unwrap();
        assert_eq!(cfg.require::<usize>("n").unwrap(), 600);
        assert_eq!(cfg.require_vec("alpha").unwrap(), vec![-0.05, 0.0, 0.032]);
        assert_eq!(cfg.raw("name"), Some("x"));
        assert!(cfg.get::<f64>("missing").unwrap().is_none());
    }

    #[test]
    fn tracks_unread_keys() {
        let cfg = KvConfig::parse("a = 1\nb = 2\n").unwrap();
        assert_eq!(cfg.get_or("a", 0).unwrap(), 1);
        assert_eq!(cfg.get_or("c", 3).unwrap(), 3);
        assert_eq!(cfg.unread_keys(), vec!["b".to_string()]);
    }

    #[test]
    fn rejects_lines_without_equals() {
        assert!(KvConfig::parse("just words").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = KvConfig::default();
        cfg.set("a", 1.5);
        cfg.set_vec("v", &[1.0, -2.25]);
        let back = KvConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }
}
