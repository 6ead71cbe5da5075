use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub fn write_output(out: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match out {
        Some(path) => std::fs::write(path, bytes)
            .map_err(|e| CliError::data(format!("cannot write --out {}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(bytes)
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::data(format!("cannot write to stdout: {e}")))
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s.into_bytes()
}

/// Flattens a JSON value into `(dotted.path, value)` rows. Arrays use their
/// indices as path segments, nulls are skipped.
pub fn flatten(prefix: &str, value: &Value, rows: &mut Vec<(String, String)>) {
    let join = |key: &str| {
        if prefix.is_empty() {
            key.to_string()
        } else {
            format!("{prefix}.{key}")
        }
    };
    match value {
        Value::Null => {}
        Value::Object(map) => map.iter().for_each(|(k, v)| flatten(&join(k), v, rows)),
        Value::Array(items) => items
            .iter()
            .enumerate()
            .for_each(|(i, v)| flatten(&join(&i.to_string()), v, rows)),
        Value::String(s) => rows.push((prefix.to_string(), s.clone())),
        other => rows.push((prefix.to_string(), other.to_string())),
    }
}

pub fn csv_bytes<I, R>(header: &[&str], rows: I) -> Vec<u8>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// `name,value` CSV of every scalar in `value`.
pub fn name_value_csv<T: Serialize>(value: &T) -> Vec<u8> {
    let mut rows = Vec::new();
    flatten("", &serde_json::to_value(value).expect("reports serialize"), &mut rows);
    csv_bytes(&["name", "value"], rows.into_iter().map(|(k, v)| [k, v]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn flatten_paths() {
        let v = json!({"a": 1.5, "b": {"c": "x", "d": [true, null]}, "e": null});
        let mut rows = Vec::new();
        flatten("", &v, &mut rows);
        let expect = [("a", "1.5"), ("b.c", "x"), ("b.d.0", "true")];
        assert_eq!(rows.len(), expect.len());
        for ((k, v), (ek, ev)) in rows.iter().zip(expect) {
            assert_eq!((k.as_str(), v.as_str()), (ek, ev));
        }
    }

    #[test]
    fn csv_quotes_commas() {
        let bytes = name_value_csv(&json!({"text": "a, b"}));
        assert_eq!(String::from_utf8(bytes).unwrap(), "name,value\ntext,\"a, b\"\n");
    }
}
