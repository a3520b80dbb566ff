//! Config loading: defaults, then the JSON config file, then `--set` overrides.

use std::fmt;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Bad invocation: unknown keys, malformed overrides, conflicting paths.
/// Maps to exit code 2.
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

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `a.b=value`. The value is read as JSON when it parses, otherwise
/// as a bare string.
fn parse_override(raw: &str) -> Result<Value> {
    let (key, value) = raw.split_once('=').ok_or_else(|| usage(format!("override `{raw}` is not key=value")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(usage(format!("override `{raw}` has an empty key")));
    }
    let mut value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    for part in key.rsplit('.') {
        let mut obj = Map::new();
        obj.insert(part.to_string(), value);
        value = Value::Object(obj);
    }
    Ok(value)
}

/// Resolves a config of type `T`. Precedence, lowest first: built-in
/// defaults, the config file, `--set` overrides in order.
pub fn resolve<T>(file: Option<&Path>, overrides: &[String]) -> Result<T>
where
    T: DeserializeOwned + Serialize + Default,
{
    let mut value = serde_json::to_value(T::default())?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let parsed: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if !parsed.is_object() {
            return Err(usage(format!("config {} must be a JSON object", path.display())));
        }
        merge(&mut value, parsed);
    }
    for raw in overrides {
        merge(&mut value, parse_override(raw)?);
    }
    serde_json::from_value(value).map_err(|e| usage(format!("invalid configuration: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct Inner {
        depth: usize,
    }

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct Demo {
        rate: f64,
        name: String,
        inner: Inner,
    }

    #[test]
    fn overrides_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"rate": 0.5, "inner": {"depth": 2}}"#).unwrap();
        let cfg: Demo = resolve(Some(&path), &["inner.depth=7".into(), "name=abc".into()]).unwrap();
        assert_eq!(cfg, Demo { rate: 0.5, name: "abc".into(), inner: Inner { depth: 7 } });
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let err = resolve::<Demo>(None, &["nope=1".into()]).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
        assert!(resolve::<Demo>(None, &["rate".into()]).is_err());
        assert!(resolve::<Demo>(None, &["inner..depth=1".into()]).is_err());
    }
}
