//! Settings resolution: defaults, then an optional JSON file, then flags.

use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Bad flags, an unreadable config or invalid parameters; exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Reads the settings object of a config file. A run manifest is accepted
/// too, provided it was written by the same command.
pub fn load_file(path: &Path, command: &str) -> anyhow::Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("reading {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| usage(format!("parsing {}: {e}", path.display())))?;
    let Value::Object(mut obj) = value else {
        return Err(usage(format!("{}: expected a JSON object", path.display())));
    };
    if let (Some(Value::String(cmd)), Some(Value::Object(_))) = (obj.get("command"), obj.get("config")) {
        if cmd != command {
            return Err(usage(format!("manifest was written by `{cmd}`, not `{command}`")));
        }
        let Some(Value::Object(cfg)) = obj.remove("config") else { unreachable!() };
        return Ok(cfg);
    }
    Ok(obj)
}

/// `defaults <- file <- flags`, where unset flags serialize to nothing.
/// Keys unknown to the settings type are rejected.
pub fn resolve<S, F>(file: Option<Map<String, Value>>, flags: &F, seed: Option<u64>) -> anyhow::Result<S>
where
    S: Serialize + DeserializeOwned + Default,
    F: Serialize,
{
    let Value::Object(mut merged) = serde_json::to_value(S::default())? else {
        unreachable!("settings serialize to objects")
    };
    let known: Vec<String> = merged.keys().cloned().collect();
    let mut overlay = |obj: Map<String, Value>, origin: &str| -> anyhow::Result<()> {
        for (k, v) in obj {
            if !known.contains(&k) {
                return Err(usage(format!("unknown {origin} key `{k}`")));
            }
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
        Ok(())
    };
    if let Some(obj) = file {
        overlay(obj, "config")?;
    }
    if let Value::Object(obj) = serde_json::to_value(flags)? {
        overlay(obj, "flag")?;
    }
    if let Some(seed) = seed {
        merged.insert("master_seed".into(), seed.into());
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| usage(format!("invalid settings: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Deserialize, Debug, PartialEq)]
    struct S {
        a: f64,
        b: u32,
        master_seed: u64,
    }

    impl Default for S {
        fn default() -> Self {
            S { a: 1.0, b: 2, master_seed: 0 }
        }
    }

    #[derive(Serialize)]
    struct Flags {
        #[serde(skip_serializing_if = "Option::is_none")]
        a: Option<f64>,
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let mut file = Map::new();
        file.insert("a".into(), 5.0.into());
        file.insert("b".into(), 7.into());
        let s: S = resolve(Some(file.clone()), &Flags { a: Some(9.0) }, Some(3)).unwrap();
        assert_eq!(s, S { a: 9.0, b: 7, master_seed: 3 });
        let s: S = resolve(Some(file), &Flags { a: None }, None).unwrap();
        assert_eq!(s, S { a: 5.0, b: 7, master_seed: 0 });
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let mut file = Map::new();
        file.insert("c".into(), 1.into());
        let e = resolve::<S, _>(Some(file), &Flags { a: None }, None).unwrap_err();
        assert!(e.downcast_ref::<UsageError>().is_some());
    }
}
