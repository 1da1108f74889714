//! Serialization helpers shared by the JSON and CSV outputs.
//!
//! Infinite bounds are written as the string `"inf"`, never as a sentinel
//! number. Matrices are written row-major as nested arrays.

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serializer};

/// Text form of an extended real: `"inf"` for +∞, shortest round-trip
/// decimal otherwise.
pub fn format_extended(value: f64) -> String {
    if value == f64::INFINITY {
        "inf".to_string()
    } else if value == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{value}")
    }
}

pub fn serialize_extended<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
    if value.is_finite() {
        s.serialize_f64(*value)
    } else {
        s.serialize_str(&format_extended(*value))
    }
}

pub fn deserialize_extended<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }
    match Repr::deserialize(d)? {
        Repr::Num(v) => Ok(v),
        Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
        Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
        Repr::Text(t) => Err(serde::de::Error::custom(format!("expected number or \"inf\", got {t:?}"))),
    }
}

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn serialize_matrix<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(rows(m))
}

pub fn serialize_opt_matrix<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
    match m {
        Some(m) => serialize_matrix(m, s),
        None => s.serialize_none(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(serde::Serialize, serde::Deserialize)]
    struct Wrap {
        #[serde(serialize_with = "serialize_extended", deserialize_with = "deserialize_extended")]
        v: f64,
    }

    #[test]
    fn infinity_is_a_string() {
        let s = serde_json::to_string(&Wrap { v: f64::INFINITY }).unwrap();
        assert_eq!(s, r#"{"v":"inf"}"#);
        let back: Wrap = serde_json::from_str(&s).unwrap();
        assert!(back.v.is_infinite());
        let back: Wrap = serde_json::from_str(r#"{"v":2.5}"#).unwrap();
        assert_eq!(back.v, 2.5);
    }
}
