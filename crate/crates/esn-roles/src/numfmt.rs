//! Significant-digit rounding for artifact serialization.
//!
//! Every numeric artifact the pipeline writes is rounded to a fixed number
//! of significant digits before serialization so reruns are byte-identical
//! across machines and thread counts.

use serde_json::Value;

/// Rounds `x` to `digits` significant digits. `digits` must be ≥ 1.
/// Non-finite values and zero pass through unchanged (−0.0 becomes 0.0).
pub fn round_sig(x: f64, digits: usize) -> f64 {
    assert!(digits >= 1);
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { 0.0 } else { x };
    }
    // Round-trip through scientific notation: exact, deterministic and
    // immune to the overflow traps of pow-of-ten scaling.
    format!("{:.*e}", digits - 1, x).parse().unwrap()
}

/// Formats `x` rounded to `digits` significant digits using the shortest
/// decimal representation that round-trips.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    format!("{}", round_sig(x, digits))
}

/// Recursively rounds every non-integer number in a JSON tree to `digits`
/// significant digits. Integers (counts, ids) are left untouched.
pub fn round_json(value: &mut Value, digits: usize) {
    match value {
        Value::Number(n) => {
            if n.is_f64() {
                let x = n.as_f64().unwrap();
                if let Some(r) = serde_json::Number::from_f64(round_sig(x, digits)) {
                    *value = Value::Number(r);
                }
            }
        }
        Value::Array(items) => {
            for item in items {
                round_json(item, digits);
            }
        }
        Value::Object(map) => {
            for (_, item) in map.iter_mut() {
                round_json(item, digits);
            }
        }
        _ => {}
    }
}
