use serde::{Deserialize, Serialize};

use super::{DraeSystem, LossBreakdown, SystemConfig, TrainConfig};
use crate::dpmm::DpmmState;
use crate::error::{DraeError, Result};
use crate::moe::{check_version, MoeCheckpoint};
use crate::numerics::{Mat, Rng};
use crate::prag::{Corpus, FusionParams};
use crate::rsho::{HyperMemory, IntegratorPlant, PidController, RuleSet};

pub const SYSTEM_CHECKPOINT_VERSION: u32 = 1;

/// Complete learner state, including random streams, so a restored system
/// continues exactly where the captured one stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemCheckpoint {
    pub version: u32,
    pub config: SystemConfig,
    pub train: TrainConfig,
    pub moe: MoeCheckpoint,
    pub encoder: Mat,
    pub corpus: Corpus,
    pub fusion: FusionParams,
    pub dpmm: DpmmState,
    pub cluster_root: Vec<usize>,
    pub root_last_active: Vec<usize>,
    pub pid: PidController,
    pub plant: IntegratorPlant,
    pub rules: RuleSet,
    pub probe_initial: Vec<usize>,
    pub memory: HyperMemory,
    pub candidate_gains: Vec<[f64; 3]>,
    pub candidate_returns: Vec<f64>,
    pub alpha: f64,
    pub gamma: f64,
    pub step: usize,
    pub l_reflex: f64,
    pub l_schema: f64,
    pub prev_hidden: Option<Vec<f64>>,
    pub prev_selection: Vec<String>,
    pub stability_sum: f64,
    pub stability_count: usize,
    pub window: Vec<LossBreakdown>,
    pub reference: Option<LossBreakdown>,
    pub rngs: [Rng; 4],
}

impl SystemCheckpoint {
    pub fn capture(s: &DraeSystem) -> Self {
        Self {
            version: SYSTEM_CHECKPOINT_VERSION,
            config: s.config.clone(),
            train: s.train.clone(),
            moe: MoeCheckpoint::capture(&s.gating, &s.experts),
            encoder: s.encoder.clone(),
            corpus: s.corpus.clone(),
            fusion: s.fusion.clone(),
            dpmm: s.dpmm.clone(),
            cluster_root: s.cluster_root.clone(),
            root_last_active: s.root_last_active.clone(),
            pid: s.pid.clone(),
            plant: s.plant.clone(),
            rules: s.rules.clone(),
            probe_initial: s.probe_initial.clone(),
            memory: s.memory.clone(),
            candidate_gains: s.candidate_gains.clone(),
            candidate_returns: s.candidate_returns.clone(),
            alpha: s.alpha,
            gamma: s.gamma,
            step: s.step,
            l_reflex: s.l_reflex,
            l_schema: s.l_schema,
            prev_hidden: s.prev_hidden.clone(),
            prev_selection: s.prev_selection.clone(),
            stability_sum: s.stability_sum,
            stability_count: s.stability_count,
            window: s.window.clone(),
            reference: s.reference,
            rngs: [s.dpmm_rng.clone(), s.expand_rng.clone(), s.plan_rng.clone(), s.pid_rng.clone()],
        }
    }

    pub fn restore(&self) -> Result<DraeSystem> {
        if self.version != SYSTEM_CHECKPOINT_VERSION {
            return Err(DraeError::UnsupportedVersion { found: self.version, expected: SYSTEM_CHECKPOINT_VERSION });
        }
        self.config.validate()?;
        self.train.validate()?;
        let (gating, experts) = self.moe.restore()?;
        self.fusion.validate()?;
        self.dpmm.validate()?;
        self.memory.validate()?;
        self.rules.validate()?;
        let clusters = self.dpmm.clusters.len();
        let bad = |m: &str| Err(DraeError::InvalidInput(format!("checkpoint: {m}")));
        if self.cluster_root.len() != clusters || self.root_last_active.len() != clusters {
            return bad("cluster bookkeeping does not match the DPMM");
        }
        if self.cluster_root.iter().any(|&r| r >= clusters) {
            return bad("cluster root out of range");
        }
        if experts.iter().any(|e| e.owning_cluster.is_some_and(|c| c >= clusters)) {
            return bad("expert owned by a missing cluster");
        }
        if gating.input_dim() != self.config.input_dim + self.corpus.dim()
            || self.encoder.rows() != self.corpus.dim()
            || self.encoder.cols() != self.config.input_dim
        {
            return bad("gating, encoder and corpus dimensions disagree");
        }
        if self.candidate_gains.len() != self.memory.rows() || self.candidate_returns.len() != self.memory.rows() {
            return bad("candidate tables do not match the memory rows");
        }
        let [dpmm_rng, expand_rng, plan_rng, pid_rng] = self.rngs.clone();
        Ok(DraeSystem {
            config: self.config.clone(),
            train: self.train.clone(),
            gating,
            experts,
            encoder: self.encoder.clone(),
            corpus: self.corpus.clone(),
            fusion: self.fusion.clone(),
            dpmm: self.dpmm.clone(),
            cluster_root: self.cluster_root.clone(),
            root_last_active: self.root_last_active.clone(),
            pid: self.pid.clone(),
            plant: self.plant.clone(),
            rules: self.rules.clone(),
            probe_initial: self.probe_initial.clone(),
            memory: self.memory.clone(),
            candidate_gains: self.candidate_gains.clone(),
            candidate_returns: self.candidate_returns.clone(),
            alpha: self.alpha,
            gamma: self.gamma,
            step: self.step,
            l_reflex: self.l_reflex,
            l_schema: self.l_schema,
            prev_hidden: self.prev_hidden.clone(),
            prev_selection: self.prev_selection.clone(),
            stability_sum: self.stability_sum,
            stability_count: self.stability_count,
            window: self.window.clone(),
            reference: self.reference,
            dpmm_rng,
            expand_rng,
            plan_rng,
            pid_rng,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses a checkpoint, rejecting unknown versions before the body.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        check_version(&raw, SYSTEM_CHECKPOINT_VERSION)?;
        Ok(serde_json::from_value(raw)?)
    }
}
