use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{invalid, Result};

/// Command settings from an optional `key=value` file, overridden by flags.
/// Keys are the long flag names without the leading dashes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// One `key=value` per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| invalid(format!("config line {}: expected key=value", n + 1)))?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(invalid(format!("config line {}: empty key", n + 1)));
            }
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(invalid(format!("config key `{key}` given twice")));
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Layers `flags` over the file and rejects keys outside `flags`.
    pub fn resolve(file: Option<RunConfig>, flags: Vec<(String, Option<String>)>) -> Result<Self> {
        let mut values = file.map(|f| f.values).unwrap_or_default();
        if let Some(k) = values.keys().find(|k| !flags.iter().any(|(f, _)| f == *k)) {
            return Err(invalid(format!("unknown config key `{k}`")));
        }
        for (k, v) in flags {
            if let Some(v) = v {
                values.insert(k, v);
            }
        }
        Ok(Self { values })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| invalid(format!("config key `{key}`: cannot parse `{v}`")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }
}
