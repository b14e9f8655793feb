//! The `key: value` line format shared by declarations, network configs and
//! the canonical encodings of on-chain records.
//!
//! Parsing rules: one entry per line, split at the first `:`, key and value
//! trimmed of surrounding whitespace. Blank lines and lines starting with `#`
//! are skipped. Keys must come from the caller's allowed set and may appear
//! once. Rendering always emits `key:value\n` with no padding, so the rendered
//! form reparses to itself.

use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LineError {
    #[error("line {0}: expected `key: value`")]
    Malformed(usize),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("duplicate key `{0}`")]
    DuplicateKey(String),
    #[error("missing key `{0}`")]
    MissingKey(String),
}

/// Parsed key/value entries, keyed by name.
#[derive(Debug, Clone, Default)]
pub struct Entries(BTreeMap<String, String>);

impl Entries {
    pub fn parse(text: &str, allowed: &[&str]) -> Result<Entries, LineError> {
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once(':').ok_or(LineError::Malformed(idx + 1))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(LineError::Malformed(idx + 1));
            }
            if !allowed.contains(&key) {
                return Err(LineError::UnknownKey(key.to_string()));
            }
            if map.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(LineError::DuplicateKey(key.to_string()));
            }
        }
        Ok(Entries(map))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, LineError> {
        self.get(key).ok_or_else(|| LineError::MissingKey(key.to_string()))
    }
}

/// Builder for canonical `key:value\n` output in caller-chosen order.
#[derive(Debug, Default)]
pub struct Renderer(String);

impl Renderer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn line(mut self, key: &str, value: impl AsRef<str>) -> Self {
        self.0.push_str(key);
        self.0.push(':');
        self.0.push_str(value.as_ref());
        self.0.push('\n');
        self
    }

    pub fn finish(self) -> String {
        self.0
    }
}

/// Splits a comma list, trimming items and dropping empties.
pub fn split_list(value: &str) -> Vec<String> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect()
}

/// `-` encodes an absent optional value.
pub fn optional(value: &str) -> Option<&str> {
    if value == "-" {
        None
    } else {
        Some(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_order_insensitively_and_skips_comments() {
        let e = Entries::parse("# c\nb: 2\n\na:1\n", &["a", "b"]).unwrap();
        assert_eq!(e.get("a"), Some("1"));
        assert_eq!(e.get("b"), Some("2"));
    }

    #[test]
    fn value_may_contain_colons() {
        let e = Entries::parse("a: x:y", &["a"]).unwrap();
        assert_eq!(e.get("a"), Some("x:y"));
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        assert_eq!(Entries::parse("z: 1", &["a"]).unwrap_err(), LineError::UnknownKey("z".into()));
        assert_eq!(Entries::parse("a: 1\na: 2", &["a"]).unwrap_err(), LineError::DuplicateKey("a".into()));
        assert_eq!(Entries::parse("a 1", &["a"]).unwrap_err(), LineError::Malformed(1));
    }

    #[test]
    fn list_splitting() {
        assert_eq!(split_list(" a, b ,,c"), vec!["a", "b", "c"]);
        assert!(split_list("").is_empty());
    }
}
