//! Config files and flag precedence.
//!
//! A config file is a flat TOML or JSON table whose keys are the long flag names
//! with `_` for `-` (e.g. `max_steps`). A table named after the subcommand
//! overrides the flat keys for that subcommand. Flags given on the command line
//! override both.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::de::{self, DeserializeOwned, Deserializer, SeqAccess, Visitor};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

pub fn load(path: &Path) -> CliResult<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    let value: Value = if is_json {
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("config {}: {e}", path.display())))?
    } else {
        let table: toml::Table =
            toml::from_str(&text).map_err(|e| CliError::config(format!("config {}: {e}", path.display())))?;
        serde_json::to_value(table).map_err(|e| CliError::config(e.to_string()))?
    };
    if !value.is_object() {
        return Err(CliError::config(format!("config {} must be a table", path.display())));
    }
    Ok(value)
}

/// Overlays the flags in `args` on the config values for `command`.
pub fn merge<T: Serialize + DeserializeOwned>(args: T, config: Option<&Value>, command: &str) -> CliResult<T> {
    let Some(Value::Object(config)) = config else {
        return Ok(args);
    };
    let mut merged: Map<String, Value> = config
        .iter()
        .filter(|(_, v)| !v.is_object())
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    if let Some(Value::Object(section)) = config.get(command) {
        merged.extend(section.clone());
    }
    let flags = serde_json::to_value(args).map_err(|e| CliError::config(e.to_string()))?;
    if let Value::Object(flags) = flags {
        merged.extend(flags.into_iter().filter(|(_, v)| !v.is_null()));
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::config(format!("config: {e}")))
}

/// A comma-separated list of reals; in a config file either a string or an array.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct FloatList(pub Vec<f64>);

impl FromStr for FloatList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().is_empty() {
            return Err("empty list".into());
        }
        s.split(',')
            .enumerate()
            .map(|(k, item)| {
                item.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("item {} ('{}') is not a number", k + 1, item.trim()))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(FloatList)
    }
}

impl<'de> Deserialize<'de> for FloatList {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = FloatList;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a list of numbers or a comma-separated string")
            }

            fn visit_str<E: de::Error>(self, s: &str) -> Result<FloatList, E> {
                s.parse().map_err(E::custom)
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<FloatList, A::Error> {
                let mut out = Vec::new();
                while let Some(v) = seq.next_element::<f64>()? {
                    out.push(v);
                }
                Ok(FloatList(out))
            }
        }
        d.deserialize_any(V)
    }
}
