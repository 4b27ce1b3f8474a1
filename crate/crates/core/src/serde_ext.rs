//! Serde helpers for values that may be infinite.
//!
//! JSON has no infinity literal; an infinite ε (a non-private run) is written
//! as the string `"inf"`.

use serde::{Deserialize, Deserializer, Serializer};

#[derive(Deserialize)]
#[serde(untagged)]
enum NumOrText {
    Num(f64),
    Text(String),
}

pub fn parse_f64_or_inf(text: &str) -> Option<f64> {
    match text.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" | "+inf" | "∞" => Some(f64::INFINITY),
        other => other.parse::<f64>().ok(),
    }
}

pub mod f64_or_inf {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match NumOrText::deserialize(d)? {
            NumOrText::Num(v) => Ok(v),
            NumOrText::Text(t) => {
                parse_f64_or_inf(&t).ok_or_else(|| serde::de::Error::custom(format!("not a number: {t:?}")))
            }
        }
    }
}

pub mod opt_f64_or_inf {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => f64_or_inf::serialize(x, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<NumOrText>::deserialize(d)? {
            None => Ok(None),
            Some(NumOrText::Num(v)) => Ok(Some(v)),
            Some(NumOrText::Text(t)) => {
                parse_f64_or_inf(&t).map(Some).ok_or_else(|| serde::de::Error::custom(format!("not a number: {t:?}")))
            }
        }
    }
}
