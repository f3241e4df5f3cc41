//! Flat `key = value` configuration files.
//!
//! One entry per line, `#` starts a comment, keys are unique. Every command
//! consumes the keys it understands and rejects anything left over.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected key = value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: duplicate key '{key}'")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: invalid value for '{key}': {msg}")]
    Value { line: usize, key: String, msg: String },
    #[error("unknown key(s): {0}")]
    Unknown(String),
    #[error("missing required key '{0}'")]
    Missing(&'static str),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type ConfigResult<T> = Result<T, ConfigError>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> ConfigResult<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                text: raw.to_string(),
            })?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    line,
                    text: raw.to_string(),
                });
            }
            if entries.insert(key.clone(), (line, v.trim().to_string())).is_some() {
                return Err(ConfigError::Duplicate { line, key });
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> ConfigResult<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), (0, value.to_string()));
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Remove and parse `key`, if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> ConfigResult<Option<T>>
    where
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e: T::Err| ConfigError::Value {
                line,
                key: key.to_string(),
                msg: e.to_string(),
            }),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> ConfigResult<T>
    where
        T::Err: Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn take_required<T: FromStr>(&mut self, key: &'static str) -> ConfigResult<T>
    where
        T::Err: Display,
    {
        self.take(key)?.ok_or(ConfigError::Missing(key))
    }

    /// Comma-separated list.
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> ConfigResult<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        let Some((line, v)) = self.entries.remove(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|e: T::Err| ConfigError::Value {
                    line,
                    key: key.to_string(),
                    msg: format!("{s:?}: {e}"),
                })
            })
            .collect::<ConfigResult<Vec<T>>>()
            .map(Some)
    }

    /// Error if any key was not consumed.
    pub fn finish(self) -> ConfigResult<()> {
        if self.entries.is_empty() {
            return Ok(());
        }
        let names: Vec<String> = self
            .entries
            .iter()
            .map(|(k, (line, _))| if *line > 0 { format!("{k} (line {line})") } else { k.clone() })
            .collect();
        Err(ConfigError::Unknown(names.join(", ")))
    }
}

/// Booleans accept true/false, yes/no, 1/0.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Flag(pub bool);

impl FromStr for Flag {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" | "on" => Ok(Flag(true)),
            "false" | "no" | "0" | "off" => Ok(Flag(false)),
            other => Err(format!("expected true or false, got {other:?}")),
        }
    }
}
