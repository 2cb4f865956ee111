//! Front end shared by the `textlabel` binary and its tests: parameter
//! dispatch, the line-delimited JSON request loop, and table rendering.

pub mod error;
pub mod ops;
pub mod render;

use std::io::{BufRead, Write};

use serde::Deserialize;
use serde_json::{json, Value};

pub use error::{CliError, CliResult, Kind};
pub use ops::dispatch;

#[derive(Debug, Deserialize)]
struct Envelope {
    op: String,
    #[serde(default)]
    params: Value,
    #[serde(default)]
    id: Value,
}

fn response(id: Value, outcome: CliResult<Value>) -> Value {
    match outcome {
        Ok(result) => json!({"id": id, "ok": true, "result": result}),
        Err(e) => json!({"id": id, "ok": false, "error": e}),
    }
}

/// Answers one request line.
pub fn handle_line(line: &str) -> Value {
    match serde_json::from_str::<Envelope>(line) {
        Ok(env) => response(env.id, dispatch(&env.op, env.params)),
        Err(e) => {
            let id = serde_json::from_str::<Value>(line)
                .ok()
                .and_then(|v| v.get("id").cloned())
                .unwrap_or(Value::Null);
            response(id, Err(CliError::validation(format!("malformed envelope: {e}"))))
        }
    }
}

/// Reads envelopes until end of input, writing one response line per
/// non-blank request line.
pub fn serve_jsonl(input: impl BufRead, mut output: impl Write) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        writeln!(output, "{}", handle_line(&line))?;
        output.flush()?;
    }
    Ok(())
}

/// Overlays `over` onto `base`, merging nested objects key by key.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Parses a TOML or JSON parameter file, by extension when it has one.
pub fn read_config(path: &std::path::Path) -> CliResult<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let toml_value = |t: &str| {
        toml::from_str::<Value>(t).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
    };
    let json_value =
        |t: &str| serde_json::from_str::<Value>(t).map_err(|e| CliError::validation(format!("{}: {e}", path.display())));
    let value = match ext.as_deref() {
        Some("toml") => toml_value(&text)?,
        Some("json") => json_value(&text)?,
        _ => json_value(&text).or_else(|_| toml_value(&text))?,
    };
    if !value.is_object() {
        return Err(CliError::validation(format!("{} must hold a table of parameters", path.display())));
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_prefers_overlay() {
        let mut base = json!({"a": 1, "m": {"x": 1, "y": 2}});
        merge(&mut base, json!({"a": 2, "m": {"y": 3}}));
        assert_eq!(base, json!({"a": 2, "m": {"x": 1, "y": 3}}));
    }

    #[test]
    fn envelopes_echo_ids() {
        let ok = handle_line(r#"{"op":"check","params":{"self":true},"id":"q1"}"#);
        assert_eq!(ok["id"], "q1");
        assert_eq!(ok["ok"], true);
        let bad = handle_line(r#"{"op":"nope","id":7}"#);
        assert_eq!((bad["id"].clone(), bad["ok"].clone()), (json!(7), json!(false)));
        assert_eq!(bad["error"]["kind"], "validation");
        let garbled = handle_line("{not json");
        assert_eq!(garbled["ok"], false);
    }
}
