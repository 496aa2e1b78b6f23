//! Flat `key = value` configuration files and the CLI > file > default merge.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use spatialgl::Error;

/// Settings read from a config file, plus the resolved value of every key that
/// was looked up (recorded in the manifest).
#[derive(Debug, Default)]
pub struct Resolver {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

fn invalid(name: &'static str, msg: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        msg: msg.into(),
    }
}

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// skipped; dashes in keys are read as underscores.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, Error> {
    let mut out = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(invalid(
                "config",
                format!("line {}: expected key = value", k + 1),
            ));
        };
        let key = key.trim().replace('-', "_");
        if key.is_empty() {
            return Err(invalid("config", format!("line {}: empty key", k + 1)));
        }
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(invalid(
                "config",
                format!("line {}: duplicate key {key}", k + 1),
            ));
        }
    }
    Ok(out)
}

impl Resolver {
    pub fn new(path: Option<&Path>) -> Result<Self, Error> {
        let file = match path {
            Some(p) => {
                if !p.is_file() {
                    return Err(invalid("config", format!("{} does not exist", p.display())));
                }
                parse_config(&fs::read_to_string(p)?)?
            }
            None => BTreeMap::new(),
        };
        Ok(Self {
            file,
            resolved: BTreeMap::new(),
        })
    }

    fn file_value<T: FromStr>(&self, key: &'static str) -> Result<Option<T>, Error> {
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| invalid(key, format!("cannot parse config value {raw:?}"))),
        }
    }

    /// Command-line value, else config file value, else `default`.
    pub fn get<T: FromStr + Display>(
        &mut self,
        key: &'static str,
        cli: Option<T>,
        default: T,
    ) -> Result<T, Error> {
        let v = match cli {
            Some(v) => v,
            None => self.file_value(key)?.unwrap_or(default),
        };
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// Like [`Resolver::get`] for settings without a default.
    pub fn get_opt<T: FromStr + Display>(
        &mut self,
        key: &'static str,
        cli: Option<T>,
    ) -> Result<Option<T>, Error> {
        let v = match cli {
            Some(v) => Some(v),
            None => self.file_value(key)?,
        };
        if let Some(v) = &v {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    /// Boolean switch: a set flag wins, otherwise the file value, otherwise `default`.
    pub fn flag(&mut self, key: &'static str, cli: bool, default: bool) -> Result<bool, Error> {
        self.get(key, cli.then_some(true), default)
    }

    /// Comma-separated list of numbers.
    pub fn list(
        &mut self,
        key: &'static str,
        cli: Option<Vec<f64>>,
        default: &[f64],
    ) -> Result<Vec<f64>, Error> {
        let v = match cli {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(raw) => parse_list(key, raw)?,
                None => default.to_vec(),
            },
        };
        let text: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        self.resolved.insert(key.to_string(), text.join(","));
        Ok(v)
    }

    /// Fails on config-file keys that no lookup consumed.
    pub fn reject_unknown(&self) -> Result<(), Error> {
        match self.file.keys().find(|k| !self.resolved.contains_key(*k)) {
            Some(k) => Err(invalid("config", format!("unknown key {k}"))),
            None => Ok(()),
        }
    }

    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.resolved
    }
}

pub fn parse_list(key: &'static str, raw: &str) -> Result<Vec<f64>, Error> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| invalid(key, format!("cannot parse {s:?} in list {raw:?}")))
        })
        .collect()
}
