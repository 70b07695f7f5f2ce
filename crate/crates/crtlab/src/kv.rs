//! Plain-text configuration documents: a version line followed by
//! `dotted.key = value` lines. Values are JSON where they parse as JSON and
//! bare strings otherwise.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const HEADER: &str = "crtlab-config 1";

/// Flattened `(key, value)` lines of a document, in file order.
pub fn parse(text: &str) -> Result<Vec<(String, Value)>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, h)) if h == HEADER => {}
        Some((n, h)) => return Err(Error::format("config", format!("line {n}: expected `{HEADER}`, found `{h}`"))),
        None => return Err(Error::format("config", format!("empty document, expected `{HEADER}`"))),
    }
    let mut out = Vec::new();
    for (n, line) in lines {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::format("config", format!("line {n}: expected `key = value`")))?;
        let k = k.trim();
        if k.is_empty() || k.split('.').any(str::is_empty) {
            return Err(Error::format("config", format!("line {n}: bad key `{k}`")));
        }
        out.push((k.to_string(), parse_value(v.trim())));
    }
    Ok(out)
}

/// `key=value` as given on the command line.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s.split_once('=').ok_or_else(|| Error::Config(format!("override `{s}` is not key=value")))?;
    Ok((k.trim().to_string(), parse_value(v.trim())))
}

pub fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn render_value(v: &Value) -> String {
    match v {
        Value::String(s) if parse_value(s) == *v && s.trim() == s && !s.is_empty() => s.clone(),
        other => other.to_string(),
    }
}

fn flatten_into(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, child) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_into(&key, child, out);
            }
        }
        other => out.push((prefix.to_string(), other.clone())),
    }
}

pub fn flatten(v: &Value) -> Vec<(String, Value)> {
    let mut out = Vec::new();
    flatten_into("", v, &mut out);
    out
}

/// Serializes `value` as a document with keys in sorted order.
pub fn to_string<T: Serialize>(value: &T) -> Result<String> {
    let mut pairs = flatten(&serde_json::to_value(value)?);
    pairs.sort_by(|a, b| a.0.cmp(&b.0));
    let mut s = String::from(HEADER);
    s.push('\n');
    for (k, v) in pairs {
        s.push_str(&format!("{k} = {}\n", render_value(&v)));
    }
    Ok(s)
}

/// Sets `key` inside `doc`. Every path segment must already exist, so
/// misspelled keys are rejected rather than ignored.
pub fn set(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map: &mut Map<String, Value> =
            cur.as_object_mut().ok_or_else(|| Error::Config(format!("`{key}`: `{}` is not a table", parts[..i].join("."))))?;
        let slot = map.get_mut(*part).ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
        if i + 1 == parts.len() {
            *slot = coerce(slot, value);
            return Ok(());
        }
        cur = slot;
    }
    unreachable!("split yields at least one segment")
}

/// Keeps string-typed slots strings even when the text looks like JSON,
/// and merges an object into a table key by key.
fn coerce(slot: &Value, value: Value) -> Value {
    match (slot, value) {
        (Value::String(_), v @ (Value::Number(_) | Value::Bool(_))) => Value::String(v.to_string()),
        (Value::Object(_), Value::Object(m)) => {
            let mut merged = slot.clone();
            for (k, v) in m {
                // Unknown keys surface as errors from the typed config.
                match merged.get_mut(&k) {
                    Some(s) => *s = coerce(s, v),
                    None => {
                        merged.as_object_mut().unwrap().insert(k, v);
                    }
                }
            }
            merged
        }
        (_, v) => v,
    }
}

/// Starts from `T::default()`, applies the document pairs, then the
/// overrides, and deserializes.
pub fn resolve<T: Serialize + DeserializeOwned + Default>(doc: Option<&str>, overrides: &[(String, Value)]) -> Result<T> {
    let mut v = serde_json::to_value(T::default())?;
    if let Some(text) = doc {
        for (k, val) in parse(text)? {
            set(&mut v, &k, val)?;
        }
    }
    for (k, val) in overrides {
        set(&mut v, k, val.clone())?;
    }
    serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
}
