//! Discrete-event simulator of a DAG-based distributed ledger under
//! adversarial tip-selection attacks, with closed-form overlays and
//! reproducible metric exports.

pub mod adversary;
pub mod config;
pub mod metrics;
pub mod protocol;
pub mod runner;
pub mod simnet;
pub mod tangle;
pub mod theory;

/// Serde helpers for f64 fields that may legitimately be infinite (the
/// "no restriction on parents' age" scenario). JSON has no infinity, so
/// infinite values round-trip as the string "inf".
pub mod serde_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Raw::Str(s) => s
                .parse::<f64>()
                .map_err(|_| serde::de::Error::custom(format!("invalid float: {s}"))),
        }
    }
}
