//! Canonical JSON text: object keys sorted, optionally with floats rounded
//! to a fixed number of decimals, so equal data always prints equally.

use serde::Serialize;
use serde_json::Value;

/// Sorted-key form of `value`, floats rounded to `decimals` when given.
pub fn canonicalize(value: &Value, decimals: Option<i32>) -> Value {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<_> = map.iter().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            Value::Object(
                entries
                    .into_iter()
                    .map(|(k, v)| (k.clone(), canonicalize(v, decimals)))
                    .collect(),
            )
        }
        Value::Array(items) => Value::Array(items.iter().map(|v| canonicalize(v, decimals)).collect()),
        Value::Number(n) if n.is_f64() => match (decimals, n.as_f64()) {
            (Some(d), Some(f)) => {
                let scale = 10f64.powi(d);
                let r = (f * scale).round() / scale;
                // -0.0 and 0.0 must print the same
                let r = if r == 0.0 { 0.0 } else { r };
                serde_json::Number::from_f64(r).map_or(Value::Null, Value::Number)
            }
            _ => value.clone(),
        },
        other => other.clone(),
    }
}

/// Pretty-printed canonical JSON of any serializable value.
pub fn to_canonical_string<T: Serialize>(value: &T, decimals: Option<i32>) -> String {
    let v = serde_json::to_value(value).expect("value serializes to JSON");
    serde_json::to_string_pretty(&canonicalize(&v, decimals)).expect("JSON prints")
}

/// Compact canonical JSON, one line.
pub fn to_canonical_line<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("value serializes to JSON");
    serde_json::to_string(&canonicalize(&v, None)).expect("JSON prints")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorts_and_rounds() {
        let v = serde_json::json!({"b": 0.1234567, "a": [{"z": 1, "y": -0.0000001}]});
        assert_eq!(
            serde_json::to_string(&canonicalize(&v, Some(6))).unwrap(),
            r#"{"a":[{"y":0.0,"z":1}],"b":0.123457}"#
        );
    }
}
