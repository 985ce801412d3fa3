//! Output encoding.
//!
//! JSON output carries every float twice: rounded to six significant
//! digits for reading, and as a hex float for bit-exact reloading. Integers
//! and other values are written as they are.

use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Number, Value};

use crate::CliError;

/// C99 `%a` style hexadecimal representation of `x`.
pub fn hex_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sign = if x.is_sign_negative() { "-" } else { "" };
    let bits = x.to_bits();
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let mant = bits & ((1u64 << 52) - 1);
    if exp_bits == 0 && mant == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, exp) = if exp_bits == 0 { (0, -1022) } else { (1, exp_bits - 1023) };
    let digits = format!("{mant:013x}");
    let digits = digits.trim_end_matches('0');
    let frac = if digits.is_empty() { String::new() } else { format!(".{digits}") };
    format!("{sign}0x{lead}{frac}p{exp:+}")
}

pub fn parse_hex_float(s: &str) -> Option<f64> {
    match s {
        "nan" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => hexf_parse::parse_hexf64(s, false).ok(),
    }
}

/// `x` rounded to six significant digits.
pub fn sig6(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

/// Replaces every float in `v` by `{"value": <6 digits>, "hex": <exact>}`.
pub fn annotate(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or(f64::NAN);
            let mut m = Map::new();
            m.insert("value".into(), Number::from_f64(sig6(x)).map_or(Value::Null, Value::Number));
            m.insert("hex".into(), Value::String(hex_float(x)));
            Value::Object(m)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(annotate).collect()),
        Value::Object(m) => Value::Object(m.into_iter().map(|(k, v)| (k, annotate(v))).collect()),
        other => other,
    }
}

/// Inverse of [`annotate`]: floats are restored from their hex field.
pub fn restore(v: Value) -> Result<Value, CliError> {
    Ok(match v {
        Value::Object(m) if m.len() == 2 && m.contains_key("value") && m.contains_key("hex") => {
            let hex = m["hex"].as_str().ok_or_else(|| CliError::Config("hex field must be a string".into()))?;
            let x = parse_hex_float(hex).ok_or_else(|| CliError::Config(format!("bad hex float {hex:?}")))?;
            Number::from_f64(x).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(restore).collect::<Result<_, _>>()?),
        Value::Object(m) => {
            Value::Object(m.into_iter().map(|(k, v)| Ok((k, restore(v)?))).collect::<Result<_, CliError>>()?)
        }
        other => other,
    })
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let v = serde_json::to_value(value).map_err(|e| CliError::Output(e.to_string()))?;
    let mut s = serde_json::to_string_pretty(&annotate(v)).map_err(|e| CliError::Output(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_text(path, &to_json(value)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Output(format!("cannot write {}: {e}", path.display())))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::Output(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::Output(e.to_string()))
}

/// Left-aligned first column, right-aligned others.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (i, c) in r.iter().enumerate().take(cols) {
            width[i] = width[i].max(c.len());
        }
    }
    let line = |cells: Vec<String>| -> String {
        let padded: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = width[0]) } else { format!("{c:>w$}", w = width[i]) })
            .collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header.iter().map(|h| h.to_string()).collect());
    out.push_str(&line(width.iter().map(|w| "-".repeat(*w)).collect()));
    for r in rows {
        out.push_str(&line(r.clone()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hex_round_trip() {
        for x in [1.0, -2.5, 0.1, 2.0817152835617914, 1e-310, f64::MAX, 0.0, -0.0, 492.0] {
            let h = hex_float(x);
            let back = parse_hex_float(&h).unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{x} -> {h}");
        }
        assert_eq!(hex_float(1.0), "0x1p+0");
        assert_eq!(hex_float(-2.5), "-0x1.4p+1");
        assert!(parse_hex_float("nan").unwrap().is_nan());
    }

    #[test]
    fn six_digits() {
        assert_eq!(sig6(2.0817152835617914), 2.08172);
        assert_eq!(sig6(303.3412), 303.341);
        assert_eq!(sig6(0.024999999), 0.025);
        assert_eq!(sig6(0.0), 0.0);
    }

    #[test]
    fn annotate_and_restore() {
        let v = serde_json::json!({"a": [1.25, 3], "b": {"c": 0.1}, "s": "x"});
        let ann = annotate(v.clone());
        assert_eq!(ann["a"][1], 3);
        assert_eq!(ann["b"]["c"]["value"], 0.1);
        assert_eq!(restore(ann).unwrap(), v);
    }

    #[test]
    fn aligned_table() {
        let t = table(&["x", "value"], &[vec!["a".into(), "1".into()], vec!["long".into(), "22".into()]]);
        assert_eq!(t, "x     value\n----  -----\na         1\nlong     22\n");
    }
}
