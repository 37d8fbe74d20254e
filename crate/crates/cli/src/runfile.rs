//! TOML run files for `seplab train`.
//!
//! Required keys: `epsilon` (inner attack radius) and a `[method]` table
//! with `kind`. Every other `TrainConfig` field is optional and defaults to
//! `TrainConfig::new(method, epsilon)`; `[inner]` may override single
//! attack fields. `train` and `test` name datasets.

use serde_json::{Map, Value};
use seplab_core::{TrainConfig, TrainMethod};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct RunFile {
    pub train: Option<String>,
    pub test: Option<String>,
    pub config: TrainConfig,
}

fn take_string(obj: &mut Map<String, Value>, key: &str) -> CliResult<Option<String>> {
    match obj.remove(key) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(other) => Err(CliError::usage(format!("`{key}` must be a string, found {other}"))),
    }
}

fn overlay(base: &mut Value, user: Value) {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot @ Value::Object(_)) if v.is_object() && k != "method" => overlay(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, u) => *b = u,
    }
}

pub fn parse(text: &str) -> CliResult<RunFile> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::usage(format!("run file: {}", e.message())))?;
    let mut obj = match serde_json::to_value(table) {
        Ok(Value::Object(m)) => m,
        _ => return Err(CliError::usage("run file must be a TOML table")),
    };
    let train = take_string(&mut obj, "train")?;
    let test = take_string(&mut obj, "test")?;
    let method: TrainMethod = serde_json::from_value(
        obj.remove("method")
            .ok_or_else(|| CliError::usage("run file: missing `[method]` table"))?,
    )
    .map_err(|e| CliError::usage(format!("run file: method: {e}")))?;
    let epsilon = obj
        .remove("epsilon")
        .ok_or_else(|| CliError::usage("run file: missing `epsilon`"))?
        .as_f64()
        .ok_or_else(|| CliError::usage("run file: `epsilon` must be a number"))?;
    let mut base = serde_json::to_value(TrainConfig::new(method, epsilon)).expect("config serializes");
    overlay(&mut base, Value::Object(obj));
    let config: TrainConfig =
        serde_json::from_value(base).map_err(|e| CliError::usage(format!("run file: {e}")))?;
    config.validate()?;
    Ok(RunFile { train, test, config })
}
