//! Flag / config-file merging. Every subcommand's options are an all-`Option`
//! struct; a TOML file supplies a table per subcommand keyed by the long flag
//! names, and explicit flags win over it. Defaults are applied afterwards.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

/// A parsed config file: one table per subcommand plus top-level keys.
#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    root: Map<String, Value>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::from_io(e, path))?;
        let table: toml::Table =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        match serde_json::to_value(table) {
            Ok(Value::Object(root)) => Ok(Self { root }),
            _ => Err(CliError::Config(format!("{}: not a table", path.display()))),
        }
    }

    pub fn section(&self, name: &str) -> Result<Map<String, Value>, CliError> {
        match self.root.get(name) {
            None => Ok(Map::new()),
            Some(Value::Object(m)) => Ok(m.clone()),
            Some(_) => Err(CliError::Config(format!("[{name}] must be a table"))),
        }
    }

    pub fn top(&self, key: &str) -> Option<&Value> {
        self.root.get(key)
    }
}

fn object<T: Serialize>(v: &T) -> Map<String, Value> {
    match serde_json::to_value(v) {
        Ok(Value::Object(m)) => m,
        _ => Map::new(),
    }
}

/// Overlays explicit flags on the config section. Unset flags (`None`) and
/// switches left off do not override the file.
pub fn resolve<T>(flags: &T, section: Map<String, Value>, name: &str) -> Result<T, CliError>
where
    T: Serialize + DeserializeOwned + Default,
{
    let known = object(&T::default());
    if let Some(k) = section.keys().find(|k| !known.contains_key(*k)) {
        return Err(CliError::Config(format!("unknown key '{k}' in [{name}]")));
    }
    let mut merged = section;
    for (k, v) in object(flags) {
        if !(v.is_null() || v == Value::Bool(false)) {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Config(format!("[{name}]: {e}")))
}
