//! Flat `key = value` configuration format.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Parsers are strict: unknown keys, duplicate keys, and unparsable values are
//! reported with their line number.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Parsed configuration: keys with values and source line numbers.
#[derive(Debug, Clone, Default)]
pub struct ConfigMap {
    entries: BTreeMap<String, (String, usize)>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(line_no, format!("expected `key = value`, got `{raw}`")))?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() || value.is_empty() {
                return Err(Error::config(line_no, "empty key or value"));
            }
            if entries.insert(key.clone(), (value, line_no)).is_some() {
                return Err(Error::config(line_no, format!("duplicate key `{key}`")));
            }
        }
        Ok(ConfigMap { entries })
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    fn raw(&self, key: &str) -> Result<(&str, usize)> {
        self.entries
            .get(key)
            .map(|(v, l)| (v.as_str(), *l))
            .ok_or_else(|| Error::config(0, format!("missing key `{key}`")))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        let (v, line) = self.raw(key)?;
        v.parse::<f64>()
            .map_err(|_| Error::config(line, format!("`{key}` is not a number: `{v}`")))
    }

    pub fn get_f64_or(&self, key: &str, default: f64) -> Result<f64> {
        if self.contains(key) {
            self.get_f64(key)
        } else {
            Ok(default)
        }
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        let (v, line) = self.raw(key)?;
        v.parse::<u64>()
            .map_err(|_| Error::config(line, format!("`{key}` is not an integer: `{v}`")))
    }

    pub fn get_u64_or(&self, key: &str, default: u64) -> Result<u64> {
        if self.contains(key) {
            self.get_u64(key)
        } else {
            Ok(default)
        }
    }

    pub fn get_str(&self, key: &str) -> Result<&str> {
        Ok(self.raw(key)?.0)
    }

    pub fn get_str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.entries
            .get(key)
            .map(|(v, _)| v.as_str())
            .unwrap_or(default)
    }

    /// Errors on any key outside `known`, naming the first offender.
    pub fn ensure_known(&self, known: &[&str]) -> Result<()> {
        for (key, (_, line)) in &self.entries {
            if !known.contains(&key.as_str()) {
                return Err(Error::config(*line, format!("unknown key `{key}`")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_values_and_comments() {
        let cfg = ConfigMap::parse("a = 1.5 # trailing\n# full comment\n\nb=2\nname = hydro\n").unwrap();
        assert_eq!(cfg.get_f64("a").unwrap(), 1.5);
        assert_eq!(cfg.get_u64("b").unwrap(), 2);
        assert_eq!(cfg.get_str("name").unwrap(), "hydro");
    }

    #[test]
    fn reports_line_numbers() {
        let err = ConfigMap::parse("a = 1\nbogus line\n").unwrap_err();
        match err {
            Error::Config { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
        let cfg = ConfigMap::parse("a = x\n").unwrap();
        match cfg.get_f64("a").unwrap_err() {
            Error::Config { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicates_and_unknown_keys() {
        assert!(ConfigMap::parse("a = 1\na = 2\n").is_err());
        let cfg = ConfigMap::parse("a = 1\nz = 3\n").unwrap();
        assert!(cfg.ensure_known(&["a"]).is_err());
        assert!(cfg.ensure_known(&["a", "z"]).is_ok());
    }
}
