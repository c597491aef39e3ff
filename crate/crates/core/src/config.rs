//! Flat key=value configuration files (UTF-8, `#` comments). CLI flags
//! override file values; the merge happens at the CLI layer.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{PatError, Result};

#[derive(Debug, Clone, Default)]
pub struct Config {
    map: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(idx) => &raw[..idx],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(PatError::Invalid(format!(
                    "config line {}: expected key=value, got {raw:?}",
                    n + 1
                )));
            };
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Config { map })
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| PatError::io(path, e))?;
        Config::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.map.insert(key.to_string(), value);
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.map
            .get(key)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|e| PatError::Invalid(format!("config {key}={v}: {e}")))
            })
            .transpose()
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.map
            .get(key)
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|e| PatError::Invalid(format!("config {key}={v}: {e}")))
            })
            .transpose()
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.map
            .get(key)
            .map(|v| {
                v.parse::<u64>()
                    .map_err(|e| PatError::Invalid(format!("config {key}={v}: {e}")))
            })
            .transpose()
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.map
            .get(key)
            .map(|v| match v.as_str() {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                other => Err(PatError::Invalid(format!("config {key}={other}: expected bool"))),
            })
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let cfg = Config::parse("# header\nnz = 80\nnoise=0.01  # trailing\n\nname=run1\n").unwrap();
        assert_eq!(cfg.get_usize("nz").unwrap(), Some(80));
        assert_eq!(cfg.get_f64("noise").unwrap(), Some(0.01));
        assert_eq!(cfg.get("name"), Some("run1"));
        assert_eq!(cfg.get("missing"), None);
    }

    #[test]
    fn rejects_lines_without_equals() {
        assert!(Config::parse("just a line\n").is_err());
    }
}
