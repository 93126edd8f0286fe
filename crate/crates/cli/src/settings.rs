//! Plain-text `key = value` settings. Command-line flags override the file.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::failure::{Failure, Outcome};

pub const KEYS: &[&str] = &[
    "prices",
    "returns",
    "matrix",
    "sectors",
    "index",
    "max_flat_fraction",
    "method",
    "level",
    "replicates",
    "seed",
    "segment_length",
    "max_triples",
    "filtered",
    "direction",
    "min_quarter_days",
    "beta",
    "window",
    "step",
    "out",
    "jobs",
];

#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: &Path) -> Outcome<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io("config", path.display(), e))?;
        Self::parse(&text).map_err(|m| Failure::config("config", format!("{}: {m}", path.display())))
    }

    /// Blank lines and `#` comments are ignored; `-` in keys reads as `_`.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", n + 1))?;
            let key = key.trim().replace('-', "_");
            if !KEYS.contains(&key.as_str()) {
                return Err(format!("line {}: unknown key `{key}`", n + 1));
            }
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(format!("line {}: `{key}` set twice", n + 1));
            }
        }
        Ok(Self { values })
    }

    /// The flag if given, else the file value, else `None`.
    pub fn pick<T>(&self, key: &str, flag: Option<T>) -> Outcome<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.values
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Failure::config("config", format!("`{key} = {v}`: {e}")))
            })
            .transpose()
    }

    pub fn pick_or<T>(&self, key: &str, flag: Option<T>, default: T) -> Outcome<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.pick(key, flag)?.unwrap_or(default))
    }

    pub fn require<T>(&self, key: &str, flag: Option<T>, stage: &str) -> Outcome<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.pick(key, flag)?
            .ok_or_else(|| Failure::config(stage, format!("missing required setting `{key}`")))
    }
}
