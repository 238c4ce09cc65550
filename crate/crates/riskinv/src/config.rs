//! Flat `key = value` run configuration. One assignment per line, `#`
//! comments, a mandatory `schema_version`, and typed accessors that report
//! the offending key on failure. The raw text is kept verbatim so outputs
//! can embed a hash of exactly what the user wrote.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};

/// Config format revision accepted by this build.
pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    raw: String,
}

impl RunConfig {
    /// Parses config text. Keys are lowercase identifiers, values are
    /// everything after the first `=`, trimmed. `schema_version` must be
    /// present and supported.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    i + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if key.is_empty()
                || !key
                    .chars()
                    .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
            {
                return Err(Error::Config(format!(
                    "line {}: key `{key}` must be a lowercase identifier",
                    i + 1
                )));
            }
            if values.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::Config(format!(
                    "line {}: duplicate key `{key}`",
                    i + 1
                )));
            }
        }
        let cfg = RunConfig {
            values,
            raw: text.to_string(),
        };
        match cfg.get_u64("schema_version")? {
            None => Err(Error::MissingKey("schema_version".into())),
            Some(SCHEMA_VERSION) => Ok(cfg),
            Some(v) => Err(Error::Config(format!(
                "schema_version {v} is not supported (expected {SCHEMA_VERSION})"
            ))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// The verbatim config text, for hashing into output headers.
    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::MissingKey(key.into()))
    }

    fn bad(key: &str, value: &str, reason: impl Into<String>) -> Error {
        Error::BadValue {
            key: key.into(),
            value: value.into(),
            reason: reason.into(),
        }
    }

    fn parse_with<T, F>(&self, key: &str, parse: F) -> Result<Option<T>>
    where
        F: Fn(&str) -> std::result::Result<T, String>,
    {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => parse(raw)
                .map(Some)
                .map_err(|reason| Self::bad(key, raw, reason)),
        }
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.parse_with(key, |s| {
            s.parse::<f64>()
                .map_err(|e| e.to_string())
                .and_then(|v| {
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err("value must be finite".into())
                    }
                })
        })
    }

    pub fn require_f64(&self, key: &str) -> Result<f64> {
        self.get_f64(key)?
            .ok_or_else(|| Error::MissingKey(key.into()))
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.parse_with(key, |s| s.parse::<u64>().map_err(|e| e.to_string()))
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.parse_with(key, |s| s.parse::<usize>().map_err(|e| e.to_string()))
    }

    pub fn require_usize(&self, key: &str) -> Result<usize> {
        self.get_usize(key)?
            .ok_or_else(|| Error::MissingKey(key.into()))
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.parse_with(key, |s| match s {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err("expected true/false".into()),
        })
    }

    pub fn get_date(&self, key: &str) -> Result<Option<NaiveDate>> {
        self.parse_with(key, |s| {
            s.parse::<NaiveDate>()
                .map_err(|_| "expected an ISO date (YYYY-MM-DD)".into())
        })
    }

    pub fn require_date(&self, key: &str) -> Result<NaiveDate> {
        self.get_date(key)?
            .ok_or_else(|| Error::MissingKey(key.into()))
    }

    /// Comma-separated float list.
    pub fn get_list_f64(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.parse_with(key, |s| {
            s.split(',')
                .map(|p| {
                    p.trim()
                        .parse::<f64>()
                        .map_err(|e| format!("element `{}`: {e}", p.trim()))
                })
                .collect()
        })
    }

    /// Comma-separated unsigned integer list.
    pub fn get_list_usize(&self, key: &str) -> Result<Option<Vec<usize>>> {
        self.parse_with(key, |s| {
            s.split(',')
                .map(|p| {
                    p.trim()
                        .parse::<usize>()
                        .map_err(|e| format!("element `{}`: {e}", p.trim()))
                })
                .collect()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "schema_version = 1\n";

    #[test]
    fn parses_keys_comments_and_whitespace() {
        let cfg = RunConfig::parse(
            "# run settings\nschema_version = 1\n\nr0 = 1.5\nlookbacks = 1, 11, 21\nspace=sector\n",
        )
        .unwrap();
        assert_eq!(cfg.get("space"), Some("sector"));
        assert_eq!(cfg.require_f64("r0").unwrap(), 1.5);
        assert_eq!(cfg.get_list_usize("lookbacks").unwrap().unwrap(), vec![1, 11, 21]);
        assert_eq!(cfg.get("absent"), None);
    }

    #[test]
    fn schema_version_is_mandatory_and_checked() {
        assert!(matches!(
            RunConfig::parse("r0 = 1\n"),
            Err(Error::MissingKey(k)) if k == "schema_version"
        ));
        assert!(matches!(
            RunConfig::parse("schema_version = 99\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn malformed_lines_and_duplicates_are_rejected() {
        assert!(RunConfig::parse("schema_version = 1\nnot a line\n").is_err());
        assert!(RunConfig::parse("schema_version = 1\nBadKey = 2\n").is_err());
        assert!(RunConfig::parse("schema_version = 1\nr0 = 1\nr0 = 2\n").is_err());
    }

    #[test]
    fn typed_getters_report_the_key() {
        let cfg = RunConfig::parse(&format!("{BASE}r0 = soon\nwhen = 2020-13-40\n")).unwrap();
        match cfg.get_f64("r0") {
            Err(Error::BadValue { key, .. }) => assert_eq!(key, "r0"),
            other => panic!("expected a bad-value error, got {other:?}"),
        }
        assert!(cfg.get_date("when").is_err());
        assert!(matches!(
            cfg.require_f64("lambda"),
            Err(Error::MissingKey(k)) if k == "lambda"
        ));
    }

    #[test]
    fn bool_date_and_lists_parse() {
        let cfg = RunConfig::parse(&format!(
            "{BASE}monthly = true\nstart = 2020-01-31\ngrid = 0.5, 1.0, 2\n"
        ))
        .unwrap();
        assert_eq!(cfg.get_bool("monthly").unwrap(), Some(true));
        assert_eq!(
            cfg.get_date("start").unwrap(),
            Some("2020-01-31".parse().unwrap())
        );
        assert_eq!(
            cfg.get_list_f64("grid").unwrap().unwrap(),
            vec![0.5, 1.0, 2.0]
        );
        assert!(!cfg.get_bool("absent").unwrap().is_some());
    }

    #[test]
    fn raw_text_is_preserved_verbatim() {
        let text = "schema_version = 1\n# note\nr0 = 2.0\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.raw(), text);
    }

    #[test]
    fn non_finite_floats_are_rejected() {
        let cfg = RunConfig::parse(&format!("{BASE}x = inf\n")).unwrap();
        assert!(cfg.get_f64("x").is_err());
    }
}
