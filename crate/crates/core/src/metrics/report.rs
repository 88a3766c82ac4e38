//! Per-run experiment reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::eval::Nmse;
use crate::distill::{EpochRecord, Pipeline, TrainPlan};
use crate::nn::{ComplexityReport, CsiDims};

/// Which network a report describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Teacher,
    Plain,
    VanillaKd,
    CodewordMimic,
}

impl Method {
    pub fn from_pipeline(p: Pipeline) -> Self {
        match p {
            Pipeline::Plain => Method::Plain,
            Pipeline::VanillaKd => Method::VanillaKd,
            Pipeline::CodewordMimic => Method::CodewordMimic,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Teacher => "CRNet (teacher)",
            Method::Plain => "BCRNet",
            Method::VanillaKd => "BCRNet-KD",
            Method::CodewordMimic => "BCRNet-CM",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub run_id: String,
    pub method: Method,
    pub plan: TrainPlan,
    pub config_hash: String,
    pub codeword_size: usize,
    pub dims: CsiDims,
    /// Test NMSE keyed by scenario name.
    pub nmse: BTreeMap<String, Nmse>,
    pub mse_cm_mid: Option<f64>,
    pub mse_cm_end: Option<f64>,
    /// Deployment cost of the encoder that was trained.
    pub complexity: ComplexityReport,
    pub history: Vec<EpochRecord>,
    /// Kept out of the serialized report so reruns stay byte-identical.
    #[serde(skip)]
    pub wall_clock_s: Option<f64>,
    pub seed: u64,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

/// SHA-256 over the canonical JSON form of `value`. Object keys are sorted,
/// so the hash does not depend on field order.
pub fn config_hash<S: Serialize>(value: &S) -> String {
    let v = serde_json::to_value(value).expect("configuration serializes");
    hash_json(&v)
}

pub fn hash_json(v: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(&canonicalize(v)).expect("json value serializes");
    Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn canonicalize(v: &serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match v {
        Value::Object(map) => {
            let sorted: BTreeMap<_, _> = map.iter().map(|(k, v)| (k.clone(), canonicalize(v))).collect();
            Value::Object(sorted.into_iter().collect())
        }
        Value::Array(items) => Value::Array(items.iter().map(canonicalize).collect()),
        other => other.clone(),
    }
}

/// Decibel values with `null` standing for negative infinity.
pub mod db_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}
