//! Numeric output conventions.
//!
//! Every floating-point number leaving the service (JSON or CSV) is rounded
//! to 9 significant decimal digits and printed in its shortest form, so
//! outputs are byte-stable across platforms.

use serde_json::Value;

/// Round to 9 significant digits.
pub fn round9(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.8e}").parse().expect("formatted float parses")
}

/// Decimal text of `round9(v)`, no exponent, no trailing `.0`.
pub fn fmt9(v: f64) -> String {
    let r = round9(v);
    if r == 0.0 {
        return "0".to_owned();
    }
    r.to_string()
}

/// JSON number for `round9(v)`; non-finite values become `null`.
pub fn num(v: f64) -> Value {
    serde_json::Number::from_f64(round9(v)).map_or(Value::Null, Value::Number)
}

/// Round every non-integer number inside `value`.
pub fn round_floats(value: &mut Value) {
    match value {
        Value::Number(n) if n.is_f64() => {
            *value = num(n.as_f64().expect("f64 number"));
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}
