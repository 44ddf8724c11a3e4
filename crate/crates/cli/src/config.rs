//! Optional flat JSON config file. Command-line flags take precedence.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::error::CliError;

#[derive(Debug, Default)]
pub struct FileConfig {
    values: Map<String, Value>,
    used: RefCell<BTreeSet<String>>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let value: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let Value::Object(raw) = value else {
            return Err("config must be a JSON object".into());
        };
        let mut values = Map::new();
        for (k, v) in raw {
            if v.is_object() {
                return Err(format!("config key `{k}` must not be nested"));
            }
            // `batch-size` and `batch_size` are the same key
            values.insert(k.replace('-', "_"), v);
        }
        Ok(FileConfig {
            values,
            used: RefCell::default(),
        })
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.used.borrow_mut().insert(key.to_string());
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| CliError::Usage(format!("config key `{key}`: {e}"))),
        }
    }

    /// Flag value, else config value, else `default`.
    pub fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError> {
        let from_file = self.get(key)?;
        Ok(flag.or(from_file).unwrap_or(default))
    }

    /// Fails on keys no option asked for.
    pub fn finish(&self) -> Result<(), CliError> {
        let used = self.used.borrow();
        let unknown: Vec<&str> = self
            .values
            .keys()
            .filter(|k| !used.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::Usage(format!("unknown config keys: {}", unknown.join(", "))))
        }
    }
}
