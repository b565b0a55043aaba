//! Flat `key = value` configuration files. Command-line flags always win
//! over file values; the resolved settings are echoed into the manifest.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// Values loaded from `--config`, consulted when a flag is absent.
#[derive(Debug, Default)]
pub struct Overlay {
    values: BTreeMap<String, String>,
}

impl Overlay {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Overlay::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Usage(format!(
                    "{}:{}: expected `key = value`, found {raw:?}",
                    path.display(),
                    i + 1
                )));
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Overlay { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// All `prefix.*` entries, e.g. the `rate.` block.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> {
        self.values.iter().filter_map(move |(k, v)| {
            k.strip_prefix(prefix).map(|rest| (rest, v.as_str()))
        })
    }
}

fn parse_key<T>(key: &str, text: &str) -> Result<T, CliError>
where
    T: FromStr,
    T::Err: Display,
{
    text.parse()
        .map_err(|e| CliError::Usage(format!("invalid value {text:?} for `{key}`: {e}")))
}

/// Flag value if given, else the config-file value.
pub fn resolve<T>(flag: Option<T>, overlay: &Overlay, key: &str) -> Result<Option<T>, CliError>
where
    T: FromStr,
    T::Err: Display,
{
    match flag {
        Some(v) => Ok(Some(v)),
        None => overlay.get(key).map(|text| parse_key(key, text)).transpose(),
    }
}

pub fn resolve_or<T>(flag: Option<T>, overlay: &Overlay, key: &str, default: T) -> Result<T, CliError>
where
    T: FromStr,
    T::Err: Display,
{
    Ok(resolve(flag, overlay, key)?.unwrap_or(default))
}

pub fn resolve_required<T>(flag: Option<T>, overlay: &Overlay, key: &str) -> Result<T, CliError>
where
    T: FromStr,
    T::Err: Display,
{
    resolve(flag, overlay, key)?
        .ok_or_else(|| CliError::Usage(format!("`{key}` is required (flag or config file)")))
}
