use serde::{Deserialize, Serialize};

use super::{Expert, GatingState};
use crate::error::{DraeError, Result};
use crate::numerics::Mat;

pub const MOE_CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertRecord {
    pub id: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub frozen: bool,
    pub owning_cluster: Option<usize>,
}

/// Serialized gating network and expert pool, parameters as flat row-major arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoeCheckpoint {
    pub version: u32,
    #[serde(rename = "K")]
    pub k: usize,
    pub m: usize,
    pub gating_input_dim: usize,
    pub gating_weights: Vec<f64>,
    pub gating_biases: Vec<f64>,
    pub experts: Vec<ExpertRecord>,
}

impl MoeCheckpoint {
    pub fn capture(gating: &GatingState, experts: &[Expert]) -> Self {
        Self {
            version: MOE_CHECKPOINT_VERSION,
            k: gating.k(),
            m: gating.m,
            gating_input_dim: gating.input_dim(),
            gating_weights: gating.weights.as_slice().to_vec(),
            gating_biases: gating.biases.clone(),
            experts: experts
                .iter()
                .map(|e| ExpertRecord {
                    id: e.id,
                    input_dim: e.input_dim(),
                    hidden_dim: e.hidden_dim(),
                    output_dim: e.output_dim(),
                    w1: e.w1.as_slice().to_vec(),
                    b1: e.b1.clone(),
                    w2: e.w2.as_slice().to_vec(),
                    b2: e.b2.clone(),
                    frozen: e.frozen,
                    owning_cluster: e.owning_cluster,
                })
                .collect(),
        }
    }

    /// Rebuilds and validates the gating state and experts.
    pub fn restore(&self) -> Result<(GatingState, Vec<Expert>)> {
        if self.version != MOE_CHECKPOINT_VERSION {
            return Err(DraeError::UnsupportedVersion {
                found: self.version,
                expected: MOE_CHECKPOINT_VERSION,
            });
        }
        if self.experts.len() != self.k {
            return Err(DraeError::Shape(format!(
                "checkpoint declares K={} but holds {} experts",
                self.k,
                self.experts.len()
            )));
        }
        let weights = Mat::from_vec(self.k, self.gating_input_dim, self.gating_weights.clone())?;
        if self.gating_biases.len() != self.k {
            return Err(DraeError::Shape("gating bias count differs from K".into()));
        }
        if self.m == 0 || self.m > self.k {
            return Err(DraeError::InvalidParameter(format!("m={} outside 1..={}", self.m, self.k)));
        }
        let gating = GatingState { weights, biases: self.gating_biases.clone(), m: self.m };
        let experts = self
            .experts
            .iter()
            .enumerate()
            .map(|(i, r)| {
                if r.id != i {
                    return Err(DraeError::InvalidInput(format!("expert ids must be 0..K, got {} at {i}", r.id)));
                }
                if r.b1.len() != r.hidden_dim || r.b2.len() != r.output_dim {
                    return Err(DraeError::Shape(format!("expert {i} bias lengths")));
                }
                Ok(Expert {
                    id: r.id,
                    w1: Mat::from_vec(r.hidden_dim, r.input_dim, r.w1.clone())?,
                    b1: r.b1.clone(),
                    w2: Mat::from_vec(r.output_dim, r.hidden_dim, r.w2.clone())?,
                    b2: r.b2.clone(),
                    owning_cluster: r.owning_cluster,
                    frozen: r.frozen,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((gating, experts))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses a checkpoint, checking `version` before the rest of the schema.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        check_version(&value, MOE_CHECKPOINT_VERSION)?;
        Ok(serde_json::from_value(value)?)
    }
}

pub(crate) fn check_version(value: &serde_json::Value, expected: u32) -> Result<()> {
    let found = value
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| DraeError::InvalidInput("checkpoint has no numeric version".into()))?;
    if found != u64::from(expected) {
        return Err(DraeError::UnsupportedVersion { found: found as u32, expected });
    }
    Ok(())
}
