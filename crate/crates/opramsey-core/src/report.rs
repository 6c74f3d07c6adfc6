//! Canonical report serialization and deterministic run manifests.
//!
//! Reports are JSON with sorted object keys and floats pinned to the
//! `%.12e` shape, so identical computations emit identical bytes and
//! diffs across runs stay below test tolerances. CSV output is the
//! plot-ready (row, col, re, im) flattening of one complex matrix.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::ramsey::fnv1a;

/// `%.12e`: twelve fractional digits, explicit exponent sign, at least
/// two exponent digits. Negative zero normalizes to zero.
pub fn format_float(x: f64) -> String {
    if x == 0.0 {
        return "0.000000000000e+00".into();
    }
    let s = format!("{:.12e}", x);
    let (mant, exp) = s.split_once('e').expect("exponential form");
    let e: i32 = exp.parse().expect("exponent");
    if e < 0 {
        format!("{mant}e-{:02}", -e)
    } else {
        format!("{mant}e+{e:02}")
    }
}

fn escape_json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization is infallible")
}

fn write_canonical(v: &Value, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else {
                out.push_str(&format_float(n.as_f64().unwrap_or(f64::NAN)));
            }
        }
        Value::String(s) => out.push_str(&escape_json_str(s)),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&escape_json_str(k));
                out.push(':');
                write_canonical(&map[*k], out);
            }
            out.push('}');
        }
    }
}

/// Canonical rendering: sorted keys, `%.12e` floats, plain integers,
/// no whitespace. Idempotent: parse ∘ emit ∘ parse = parse.
pub fn canonical_json(v: &Value) -> String {
    let mut out = String::new();
    write_canonical(v, &mut out);
    out
}

pub fn to_canonical<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)
        .map_err(|e| Error::Json(format!("payload not serializable: {e}")))?;
    Ok(canonical_json(&v))
}

/// Flatten one complex matrix to CSV with the declared header row.
pub fn matrix_csv(m: &ComplexMatrix) -> String {
    let mut out = String::from("row,col,re,im\n");
    for r in 0..m.rows {
        for c in 0..m.cols {
            let z = m.at(r, c);
            out.push_str(&format!(
                "{r},{c},{},{}\n",
                format_float(z.re),
                format_float(z.im)
            ));
        }
    }
    out
}

/// CSV for a serialized matrix value ({rows, cols, entries}); searches
/// one level of nesting so report payloads stay csv-able.
pub fn value_matrix_csv(v: &Value) -> Result<String> {
    fn try_matrix(v: &Value) -> Option<ComplexMatrix> {
        serde_json::from_value::<ComplexMatrix>(v.clone()).ok()
    }
    if let Some(m) = try_matrix(v) {
        return Ok(matrix_csv(&m));
    }
    if let Value::Object(map) = v {
        let mut keys: Vec<&String> = map.keys().collect();
        keys.sort();
        for k in keys {
            if let Some(m) = try_matrix(&map[k]) {
                return Ok(matrix_csv(&m));
            }
        }
    }
    Err(Error::Json("payload carries no complex matrix to flatten".into()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: u64,
    pub seed: u64,
    pub tool_version: String,
    pub wall_time_ms: u64,
}

/// FNV-1a over the canonical config rendering.
pub fn config_hash(config: &Value) -> u64 {
    fnv1a(canonical_json(config).as_bytes(), 0)
}

/// Full report envelope. The config rides along so a manifest can be
/// replayed without external state; payload bytes are the determinism
/// contract, wall time is informational.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub manifest: RunManifest,
    pub config: Value,
    pub payload: Value,
}

impl Report {
    pub fn new(
        command: &str,
        config: Value,
        seed: u64,
        tool_version: &str,
        wall_time_ms: u64,
        payload: Value,
    ) -> Self {
        Report {
            manifest: RunManifest {
                command: command.to_string(),
                config_hash: config_hash(&config),
                seed,
                tool_version: tool_version.to_string(),
                wall_time_ms,
            },
            config,
            payload,
        }
    }

    pub fn render(&self) -> Result<String> {
        to_canonical(self)
    }

    pub fn payload_bytes(&self) -> String {
        canonical_json(&self.payload)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::C64;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use serde_json::json;

    #[test]
    fn float_format_is_c_style() {
        assert_eq!(format_float(1.0), "1.000000000000e+00");
        assert_eq!(format_float(0.0), "0.000000000000e+00");
        assert_eq!(format_float(-0.0), "0.000000000000e+00");
        assert_eq!(format_float(0.25), "2.500000000000e-01");
        assert_eq!(format_float(-1.5e-12), "-1.500000000000e-12");
        assert_eq!(format_float(6.02214076e23), "6.022140760000e+23");
    }

    #[test]
    fn canonical_sorts_keys_and_pins_floats() {
        let v = json!({"b": 2, "a": {"z": 0.5, "y": [1, 2.0]}, "s": "x\"y"});
        assert_eq!(
            canonical_json(&v),
            r#"{"a":{"y":[1,2.000000000000e+00],"z":5.000000000000e-01},"b":2,"s":"x\"y"}"#
        );
        assert_eq!(canonical_json(&json!({})), "{}");
    }

    #[test]
    fn canonical_is_idempotent_on_random_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let v = json!({
                "f": rng.gen::<f64>() * 10f64.powi(rng.gen_range(-20..20)),
                "i": rng.gen::<i64>(),
                "nest": [rng.gen::<f64>(), {"k": rng.gen::<f64>() - 0.5}],
            });
            let once = canonical_json(&v);
            let reparsed: Value = serde_json::from_str(&once).unwrap();
            assert_eq!(canonical_json(&reparsed), once);
        }
    }

    #[test]
    fn matrix_csv_shape() {
        let m = ComplexMatrix::from_fn(2, 2, |r, c| C64::new((r * 2 + c) as f64, -1.0));
        let csv = matrix_csv(&m);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "row,col,re,im");
        assert_eq!(lines[3], "1,0,2.000000000000e+00,-1.000000000000e+00");
        let roundtrip = serde_json::to_value(&m).unwrap();
        assert!(value_matrix_csv(&roundtrip).is_ok());
        assert!(value_matrix_csv(&json!({"choi": roundtrip})).is_ok());
        assert!(value_matrix_csv(&json!({"x": 1})).is_err());
    }

    #[test]
    fn config_hash_frozen_and_order_independent() {
        let a = json!({"n": 3, "seed": 7});
        let b = json!({"seed": 7, "n": 3});
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&json!({})), fnv1a(b"{}", 0));
    }

    #[test]
    fn report_envelope_renders_canonically() {
        let r = Report::new("epi count", json!({"n": 3, "k": 2}), 0, "0.1.0", 12, json!({"count": 3}));
        let s = r.render().unwrap();
        assert!(s.starts_with("{\"config\":"));
        assert!(s.contains("\"payload\":{\"count\":3}"));
        let back: Report = serde_json::from_str(&s).unwrap();
        assert_eq!(back.payload_bytes(), r.payload_bytes());
        assert_eq!(back.manifest.config_hash, config_hash(&r.config));
    }
}
