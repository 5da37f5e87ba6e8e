//! Serializes penalty weights, writing `+inf` as the string `"inf"`.

use serde::de::{self, Visitor};
use serde::{Deserializer, Serializer};

pub fn serialize<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
    if value.is_infinite() && *value > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*value)
    }
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    struct PenaltyVisitor;

    impl Visitor<'_> for PenaltyVisitor {
        type Value = f64;

        fn expecting(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
            f.write_str("a non-negative number or \"inf\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            parse_penalty(v).map_err(E::custom)
        }
    }

    d.deserialize_any(PenaltyVisitor)
}

/// Parses a penalty literal: a non-negative float or `inf`.
pub fn parse_penalty(s: &str) -> Result<f64, String> {
    let v = match s.trim() {
        "inf" | "Inf" | "INF" | "infinity" => f64::INFINITY,
        other => other
            .parse::<f64>()
            .map_err(|_| format!("invalid penalty {other:?}"))?,
    };
    if v.is_nan() || v < 0.0 {
        return Err(format!("penalty must be non-negative, got {s:?}"));
    }
    Ok(v)
}
