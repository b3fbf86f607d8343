//! Coverage repair for multi-modal datasets.
//!
//! The crate detects maximal uncovered patterns, plans the minimal number of
//! synthetic tuples per combination, asks a pluggable generator for candidates
//! (optionally guided by an existing tuple and a mask), and accepts a candidate
//! only when it passes a one-class SVM distribution gate and a t-test quality
//! gate over human (or simulated) realism labels.

pub mod fixtures;
pub mod generator_client;
pub mod guide_selection;
pub mod orchestrator;
pub mod patterns;
pub mod selection;

use serde::{Deserialize, Serialize};

/// Outcome of a gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

/// Serde helper writing non-finite floats as the strings `"inf"`, `"-inf"`, `"nan"`.
pub(crate) mod float_text {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("invalid float `{other}`"))),
            },
        }
    }
}
