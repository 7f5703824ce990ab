//! Flat `key = value` configuration files and run profiles.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::decode::DecodeConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// Ordered key/value pairs. Later assignments win.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    /// Parses `key = value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            kv.push_assignment(line).map_err(|e| Error::Parse {
                path: "<config>".into(),
                line: n + 1,
                message: e.to_string(),
            })?;
        }
        Ok(kv)
    }

    /// Adds one `key=value` assignment.
    pub fn push_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("expected key=value, got {assignment:?}")))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::config(format!("empty key in {assignment:?}")));
        }
        self.entries.insert(k.to_owned(), v.trim().to_owned());
        Ok(())
    }

    pub fn insert(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_owned(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn extend(&mut self, other: &KeyValues) {
        for (k, v) in other.iter() {
            self.entries.insert(k.to_owned(), v.to_owned());
        }
    }

    pub fn to_text(&self) -> String {
        self.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Parses a config value, naming the key on failure.
pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value {value:?} for {key}")))
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::config(format!("invalid boolean {value:?} for {key}"))),
    }
}

/// Everything a run needs besides file paths.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    /// Full-size values.
    Paper,
    /// Small sizes that train in minutes on one core.
    Test,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "test" => Ok(Profile::Test),
            _ => Err(Error::config(format!("unknown profile {s:?}"))),
        }
    }
}

impl Settings {
    pub fn profile(p: Profile) -> Self {
        Settings {
            seed: 1,
            model: ModelConfig::profile(p),
            train: TrainConfig::profile(p),
            decode: DecodeConfig::default(),
        }
    }

    /// Applies every entry; unknown keys are errors.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        for (k, v) in kv.iter() {
            let known = if k == "seed" {
                self.seed = parse_value(k, v)?;
                true
            } else if let Some(rest) = k.strip_prefix("model.") {
                self.model.set(rest, v)?
            } else if let Some(rest) = k.strip_prefix("train.") {
                self.train.set(rest, v)?
            } else if let Some(rest) = k.strip_prefix("decode.") {
                self.decode.set(rest, v)?
            } else {
                false
            };
            if !known {
                return Err(Error::config(format!("unknown configuration key {k:?}")));
            }
        }
        self.model.validate()?;
        self.train.validate()
    }

    /// The fully resolved configuration.
    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.insert("seed", self.seed);
        for (k, v) in self.model.entries() {
            kv.insert(&format!("model.{k}"), v);
        }
        for (k, v) in self.train.entries() {
            kv.insert(&format!("train.{k}"), v);
        }
        for (k, v) in self.decode.entries() {
            kv.insert(&format!("decode.{k}"), v);
        }
        kv
    }
}
