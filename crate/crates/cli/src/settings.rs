//! JSON configuration file merged under command-line flags.
//!
//! The file is one flat object keyed by long flag names (`"min-area"`,
//! `"window"`, ...). A flag given on the command line always wins.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Default)]
pub struct Settings {
    values: Map<String, Value>,
    /// Directory of the config file; relative paths in it resolve here.
    base: Option<PathBuf>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
        let Value::Object(values) = value else {
            return Err(CliError::Format(format!("{}: config must be a JSON object", path.display())));
        };
        Ok(Self {
            values,
            base: path.parent().map(Path::to_path_buf),
        })
    }

    fn lookup<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.values
            .get(key)
            .map(|v| {
                serde_json::from_value(v.clone())
                    .map_err(|e| CliError::Validation(format!("config key {key:?}: {e}")))
            })
            .transpose()
    }

    /// Flag value, else config value, else `default`.
    pub fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError> {
        Ok(match flag {
            Some(v) => v,
            None => self.lookup(key)?.unwrap_or(default),
        })
    }

    pub fn pick_opt<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.lookup(key),
        }
    }

    /// Like `pick_opt` for paths; config paths are relative to the config file.
    pub fn path(&self, flag: Option<PathBuf>, key: &str) -> Result<Option<PathBuf>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        Ok(self.lookup::<PathBuf>(key)?.map(|p| match &self.base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p,
        }))
    }

    pub fn require_path(&self, flag: Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
        self.path(flag, key)?
            .ok_or_else(|| CliError::Validation(format!("missing --{key}")))
    }

    /// Repeated flag, else a config array.
    pub fn list<T: DeserializeOwned>(&self, flag: Vec<T>, key: &str) -> Result<Vec<T>, CliError> {
        if !flag.is_empty() {
            return Ok(flag);
        }
        Ok(self.lookup(key)?.unwrap_or_default())
    }
}
