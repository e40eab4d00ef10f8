//! Plain-text `key = value` configuration files.
//!
//! One entry per line, `#` starts a comment, blank lines are ignored.
//! Scene keys such as `obstacle` may repeat; every other key may appear once.
//! Consumers take the keys they understand and [`KvDoc::finish`] rejects
//! whatever is left, so typos surface with their line number.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

impl Entry {
    pub fn parse<T: FromStr>(&self) -> Result<T> {
        self.value
            .parse()
            .map_err(|_| Error::config_at(self.line, format!("{}: cannot parse {:?}", self.key, self.value)))
    }

    pub fn parse_f64(&self) -> Result<f64> {
        let v: f64 = self.parse()?;
        if !v.is_finite() {
            return Err(Error::config_at(self.line, format!("{}: value must be finite", self.key)));
        }
        Ok(v)
    }

    /// Whitespace-separated list of exactly `n` numbers (any count when `n` is 0).
    pub fn parse_f64s(&self, n: usize) -> Result<Vec<f64>> {
        let vals = self
            .value
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::config_at(self.line, format!("{}: bad number {t:?}", self.key)))
            })
            .collect::<Result<Vec<_>>>()?;
        if n != 0 && vals.len() != n {
            return Err(Error::config_at(
                self.line,
                format!("{}: expected {n} numbers, got {}", self.key, vals.len()),
            ));
        }
        Ok(vals)
    }

    pub fn parse_usizes(&self) -> Result<Vec<usize>> {
        self.value
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::config_at(self.line, format!("{}: bad integer {t:?}", self.key)))
            })
            .collect()
    }

    pub fn parse_bool(&self) -> Result<bool> {
        match self.value.as_str() {
            "true" | "yes" | "1" | "on" => Ok(true),
            "false" | "no" | "0" | "off" => Ok(false),
            _ => Err(Error::config_at(self.line, format!("{}: expected true/false, got {:?}", self.key, self.value))),
        }
    }

    pub fn error(&self, message: impl std::fmt::Display) -> Error {
        Error::config_at(self.line, format!("{}: {message}", self.key))
    }
}

#[derive(Debug, Clone, Default)]
pub struct KvDoc {
    entries: Vec<Entry>,
}

/// Keys that may legitimately appear more than once.
const REPEATABLE: &[&str] = &["obstacle", "person.waypoint"];

impl KvDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<Entry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::config_at(line, format!("expected `key = value`, got {content:?}")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::config_at(line, "empty key"));
            }
            if !REPEATABLE.contains(&key) {
                if let Some(prev) = entries.iter().find(|e| e.key == key) {
                    return Err(Error::config_at(line, format!("duplicate key {key:?} (first set on line {})", prev.line)));
                }
            }
            entries.push(Entry { line, key: key.to_string(), value: value.trim().to_string() });
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn take(&mut self, key: &str) -> Option<Entry> {
        let idx = self.entries.iter().position(|e| e.key == key)?;
        Some(self.entries.remove(idx))
    }

    pub fn take_all(&mut self, key: &str) -> Vec<Entry> {
        let (taken, kept) = std::mem::take(&mut self.entries).into_iter().partition(|e| e.key == key);
        self.entries = kept;
        taken
    }

    /// Overrides (or inserts) a key, e.g. from a command-line flag.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.entries.iter_mut().find(|e| e.key == key) {
            Some(e) => {
                e.value = value;
                e.line = 0;
            }
            None => self.entries.push(Entry { line: 0, key: key.to_string(), value }),
        }
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    /// Adds every key of `base` that this document does not set itself.
    /// Repeatable keys are inherited only as a group.
    pub fn inherit(&mut self, base: KvDoc) {
        let own: Vec<String> = self.entries.iter().map(|e| e.key.clone()).collect();
        for e in base.entries {
            if !own.contains(&e.key) {
                self.entries.push(e);
            }
        }
    }

    /// Errors on the first key nobody consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            Some(e) => Err(Error::config_at(e.line, format!("unknown key {:?}", e.key))),
            None => Ok(()),
        }
    }
}
