//! Machine-readable run reports shared by all CLI commands.

use crate::exact::{ExactAnswer, Query};
use crate::model::CompartmentalModel;
use crate::stat::EstimateResult;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// FNV-1a over the canonical model serialization; cheap and stable.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelInfo {
    pub name: String,
    /// FNV-1a of the canonical model file text, hex-encoded.
    pub hash: String,
    pub compartments: usize,
    pub edges: usize,
    pub pop: u32,
    pub h: String,
}

impl ModelInfo {
    pub fn new(model: &CompartmentalModel) -> Self {
        ModelInfo {
            name: model.name.clone(),
            hash: format!("{:016x}", fnv1a64(crate::cms::serialize_cms(model).as_bytes())),
            compartments: model.n_compartments(),
            edges: model.n_edges(),
            pop: model.pop,
            h: model.h.to_decimal_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeInfo {
    pub index: usize,
    pub from: String,
    pub to: String,
    pub rate: String,
    /// Success probability at the report's reference state.
    pub probability: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub model: ModelInfo,
    pub wall_ms: u128,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query: Option<Query>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub engine: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact: Option<ExactAnswer>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<EstimateResult>,
    /// Complement reading of the population-constancy query: probability
    /// of a violation before the epidemic ends.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub violation_probability: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_states: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub files: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compartments: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edge_details: Option<Vec<EdgeInfo>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state_space_estimate: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn new(command: &str, model: &CompartmentalModel) -> Self {
        RunReport {
            schema_version: SCHEMA_VERSION,
            tool: "inform".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            model: ModelInfo::new(model),
            wall_ms: 0,
            initial: None,
            query: None,
            engine: None,
            exact: None,
            estimate: None,
            violation_probability: None,
            seed: None,
            n_states: None,
            files: None,
            compartments: None,
            edge_details: None,
            state_space_estimate: None,
            warnings: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
