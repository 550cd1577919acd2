//! Config files, flag overlay and model loading.

use std::fs;

use degsde::models::{builtin_model, builtin_with, load_model, BuiltinOptions, ModelSpec, BUILTIN_NAMES};
use degsde::sdesim::SdeModel;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

/// Read a config file. A report written by this tool is accepted too: its
/// embedded `config` object is used, so any report can be re-run as is.
pub fn read_config(path: Option<&str>) -> Result<Map<String, Value>, CliError> {
    let Some(path) = path else {
        return Ok(Map::new());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read config {path}: {e}")))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| CliError::usage(format!("config {path}: {e}")))?;
    match value {
        Value::Object(mut obj) => {
            if obj.get("tool").and_then(Value::as_str) == Some(crate::TOOL) {
                match obj.remove("config") {
                    Some(Value::Object(inner)) => Ok(inner),
                    _ => Err(CliError::usage(format!("report {path} has no config object"))),
                }
            } else {
                Ok(obj)
            }
        }
        _ => Err(CliError::usage(format!("config {path} must be a JSON object"))),
    }
}

/// Overlay the explicitly given flags on the file config and deserialize.
/// Flags left unset serialize to `null` and never override the file.
pub fn resolve<A: Serialize, C: DeserializeOwned>(mut base: Map<String, Value>, flags: &A) -> Result<C, CliError> {
    let Value::Object(over) = serde_json::to_value(flags).map_err(|e| CliError::usage(e.to_string()))? else {
        unreachable!("flag structs serialize to objects")
    };
    for (k, v) in over {
        if !v.is_null() {
            base.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(base)).map_err(|e| CliError::usage(format!("config: {e}")))
}

/// A builtin name or a path to a model JSON file.
pub fn load(name: &str, d: Option<usize>, d0: Option<usize>) -> Result<(ModelSpec, SdeModel), CliError> {
    if BUILTIN_NAMES.contains(&name) {
        let def = BuiltinOptions::default();
        let opts = BuiltinOptions { d: d.unwrap_or(def.d), d0: d0.unwrap_or(def.d0) };
        return Ok((builtin_with(name, opts)?, builtin_model(name, opts)?));
    }
    let text = fs::read_to_string(name).map_err(|e| {
        CliError::usage(format!("`{name}` is neither a builtin ({}) nor a readable file: {e}", BUILTIN_NAMES.join(", ")))
    })?;
    let spec = ModelSpec::from_json(&text)?;
    let model = load_model(&spec)?;
    Ok((spec, model))
}

pub fn require<T>(v: Option<T>, what: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::usage(format!("missing {what} (give it as an argument or in --config)")))
}
