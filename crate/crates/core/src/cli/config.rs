//! Flat `key = value` config files and flag/config/default resolution.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use clap::ValueEnum;
use log::warn;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

/// Parsed config file. Keys may be written with `-` or `_`.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

fn normalize_key(k: &str) -> String {
    k.trim().replace('-', "_")
}

impl ConfigFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "expected key = value".into(),
            })?;
            let k = normalize_key(k);
            if k.is_empty() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: "empty key".into(),
                });
            }
            values.insert(k, v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(|s| s.as_str())
    }
}

/// Resolves settings as flag > config file > default and records every
/// effective value for the run manifest.
#[derive(Debug, Default)]
pub struct Settings {
    file: ConfigFile,
    snapshot: BTreeMap<String, Value>,
}

impl Settings {
    pub fn new(file: ConfigFile) -> Self {
        Self {
            file,
            snapshot: BTreeMap::new(),
        }
    }

    fn from_file<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.file.get(key) {
            None => Ok(None),
            Some(s) => s
                .parse::<T>()
                .map(Some)
                .map_err(|e| Error::InvalidArgument(format!("config key '{key}' = '{s}': {e}"))),
        }
    }

    pub fn resolve<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Serialize,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.from_file(key)?.unwrap_or(default),
        };
        self.record(key, &v);
        Ok(v)
    }

    /// Like [`Settings::resolve`] for values that may stay unset.
    pub fn resolve_opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Serialize,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.from_file(key)?,
        };
        self.record(key, &v);
        Ok(v)
    }

    pub fn resolve_enum<T: ValueEnum + Clone>(
        &mut self,
        key: &str,
        flag: Option<T>,
        default: T,
    ) -> Result<T> {
        let v = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(s) => T::from_str(s, true)
                    .map_err(|e| Error::InvalidArgument(format!("config key '{key}': {e}")))?,
                None => default,
            },
        };
        let name = v
            .to_possible_value()
            .map(|p| p.get_name().to_string())
            .unwrap_or_default();
        self.snapshot.insert(key.to_string(), Value::String(name));
        Ok(v)
    }

    pub fn record<T: Serialize>(&mut self, key: &str, value: &T) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.snapshot.insert(key.to_string(), v);
    }

    /// Effective settings; warns once about config keys that nothing read.
    pub fn finish(self) -> BTreeMap<String, Value> {
        for k in self.file.keys() {
            if !self.snapshot.contains_key(k) {
                warn!("config key '{k}' is not used by this command");
            }
        }
        self.snapshot
    }
}
