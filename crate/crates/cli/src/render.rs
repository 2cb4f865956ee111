//! Plain-text rendering of JSON results as an aligned two-column table.

use serde_json::Value;

/// Arrays of objects longer than this are summarized instead of expanded.
const MAX_EXPANDED_ROWS: usize = 40;

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::Null => Some("-".into()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(match n.as_f64() {
            Some(x) if n.is_f64() && x != 0.0 && x.abs() < 1e-4 => format!("{x:.3e}"),
            Some(x) if n.is_f64() => format!("{x:.6}"),
            _ => n.to_string(),
        }),
        Value::String(s) => Some(s.clone()),
        _ => None,
    }
}

fn flatten(prefix: &str, v: &Value, rows: &mut Vec<(String, String)>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                flatten(&key(k), child, rows);
            }
        }
        Value::Array(items) if items.iter().all(|x| scalar(x).is_some()) => {
            let cells: Vec<String> = items.iter().filter_map(scalar).collect();
            rows.push((prefix.to_string(), format!("[{}]", cells.join(", "))));
        }
        Value::Array(items) if items.len() > MAX_EXPANDED_ROWS => {
            rows.push((prefix.to_string(), format!("({} rows; use --json for all)", items.len())));
        }
        Value::Array(items) => {
            for (i, child) in items.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), child, rows);
            }
        }
        other => rows.push((prefix.to_string(), scalar(other).unwrap_or_default())),
    }
}

pub fn table(v: &Value) -> String {
    let mut rows = Vec::new();
    flatten("", v, &mut rows);
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter()
        .map(|(k, val)| format!("{k:<width$}  {val}\n"))
        .collect()
}
