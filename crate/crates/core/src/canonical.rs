//! Canonical JSON: object keys sorted by code point, no insignificant
//! whitespace, arrays in stored order.
//!
//! Every document that is embedded in a prompt, hashed, or written to the
//! study directory goes through [`to_canonical_string`], so equal values
//! always produce equal bytes.

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Serializes `value` to canonical JSON text.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let value = serde_json::to_value(value)?;
    Ok(canonicalize(&value))
}

/// Renders an already-parsed JSON value canonically.
pub fn canonicalize(value: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, value);
    out
}

fn write_value(out: &mut String, value: &Value) {
    match value {
        Value::Object(map) => {
            // UTF-8 byte order equals code point order.
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
            out.push('{');
            for (i, (key, val)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_string(out, key);
                out.push(':');
                write_value(out, val);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(out, item);
            }
            out.push(']');
        }
        Value::String(s) => write_string(out, s),
        // Scalars already have a single serde_json rendering.
        other => out.push_str(&other.to_string()),
    }
}

fn write_string(out: &mut String, s: &str) {
    out.push_str(&Value::String(s.to_owned()).to_string());
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

/// Hash of the canonical form of `value`.
pub fn digest<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    Ok(sha256_hex(to_canonical_string(value)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn sorts_keys_recursively() {
        let v = json!({"b": 1, "a": {"z": [3, {"y": 1, "x": 2}], "c": null}});
        assert_eq!(
            canonicalize(&v),
            r#"{"a":{"c":null,"z":[3,{"x":2,"y":1}]},"b":1}"#
        );
    }

    #[test]
    fn key_order_does_not_matter() {
        let a: Value = serde_json::from_str(r#"{"x":"1","y":[1,2],"é":true}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{ "é": true, "y": [1, 2], "x": "1" }"#).unwrap();
        assert_eq!(canonicalize(&a), canonicalize(&b));
    }

    #[test]
    fn code_point_order_not_utf16() {
        // U+FB01 sorts before U+1F600 by code point, after it in UTF-16 units.
        let v = json!({"\u{1F600}": 1, "\u{FB01}": 2});
        assert_eq!(canonicalize(&v), "{\"\u{FB01}\":2,\"\u{1F600}\":1}");
    }

    #[test]
    fn escapes_strings() {
        let v = json!({"q": "a\"b\\c\n"});
        assert_eq!(canonicalize(&v), r#"{"q":"a\"b\\c\n"}"#);
    }
}
