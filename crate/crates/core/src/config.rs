//! Plain `key=value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are
//! dot-namespaced (`of.alpha`, `train.epochs`, `synth.seed`). Later
//! assignments override earlier ones, which is how CLI flags are layered
//! over file values.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{bail, Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(Config, "line {}: expected key=value, got {:?}", lineno + 1, raw);
            };
            let key = key.trim();
            if key.is_empty() {
                bail!(Config, "line {}: empty key", lineno + 1);
            }
            kv.set(key, value.trim());
        }
        Ok(kv)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Parses `key` if present; absent keys yield `Ok(None)`.
    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|e| Error::Config(format!("{key}={v}: {e}"))),
        }
    }

    pub fn get_or<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Overlays `other` on top of `self`.
    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Serializes back to `key=value` lines in sorted key order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let kv = KeyValues::parse("# header\nof.alpha = 0.5\n\nof.alpha=0.25\ntrain.epochs=3\n").unwrap();
        assert_eq!(kv.get::<f64>("of.alpha").unwrap(), Some(0.25));
        assert_eq!(kv.get_or("train.epochs", 20usize).unwrap(), 3);
        assert_eq!(kv.get_or("missing", 7u32).unwrap(), 7);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(KeyValues::parse("novalue"), Err(Error::Config(_))));
        assert!(matches!(KeyValues::parse("=1"), Err(Error::Config(_))));
        let kv = KeyValues::parse("x=abc").unwrap();
        assert!(matches!(kv.get::<f64>("x"), Err(Error::Config(_))));
    }

    #[test]
    fn render_round_trips() {
        let kv = KeyValues::parse("b=2\na=1\n").unwrap();
        assert_eq!(kv.render(), "a=1\nb=2\n");
        assert_eq!(KeyValues::parse(&kv.render()).unwrap(), kv);
    }
}
