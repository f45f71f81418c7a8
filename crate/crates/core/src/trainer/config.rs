use serde::{Deserialize, Serialize};

use crate::error::{DraeError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpmmConfig {
    pub alpha: f64,
    pub base_var: f64,
    pub obs_var: f64,
    pub tau: f64,
}

impl Default for DpmmConfig {
    fn default() -> Self {
        Self { alpha: 1.0, base_var: 16.0, obs_var: 1.0, tau: crate::dpmm::DEFAULT_TAU }
    }
}

/// Control-stack settings: PID gains, planner probe and candidate memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub noise_var: f64,
    /// Steps between gain-adaptation updates; 0 disables adaptation.
    pub adapt_every: usize,
    pub plan_budget: usize,
    /// Steps between planner probes; 0 probes only once at start.
    pub schema_every: usize,
    pub memory_decay: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            kp: 1.0,
            ki: 0.1,
            kd: 0.01,
            noise_var: crate::rsho::DEFAULT_NOISE_VAR,
            adapt_every: 500,
            plan_budget: 2000,
            schema_every: 1000,
            memory_decay: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    pub input_dim: usize,
    pub num_classes: usize,
    pub hidden_dim: usize,
    pub initial_experts: usize,
    pub active_experts: usize,
    pub init_scale: f64,
    /// Grow experts on DPMM expansion signals.
    pub expansion: bool,
    /// Freeze experts whose task cluster has been idle for `freeze_window` steps.
    pub freeze: bool,
    pub freeze_window: usize,
    /// Route each input only among the experts of its task root.
    pub task_routing: bool,
    pub retrieval_lambda: f64,
    pub fusion_rank: usize,
    pub dpmm: DpmmConfig,
    pub control: ControlConfig,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            num_classes: 2,
            hidden_dim: 16,
            initial_experts: 2,
            active_experts: 2,
            init_scale: 1.0,
            expansion: true,
            freeze: true,
            freeze_window: 50,
            task_routing: true,
            retrieval_lambda: 0.5,
            fusion_rank: 2,
            dpmm: DpmmConfig::default(),
            control: ControlConfig::default(),
        }
    }
}

impl SystemConfig {
    /// Single shared network: one expert, no growth, no freezing.
    pub fn shared_baseline(mut self) -> Self {
        self.initial_experts = 1;
        self.active_experts = 1;
        self.expansion = false;
        self.freeze = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DraeError::Config(m));
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return bad("input_dim and hidden_dim must be positive".into());
        }
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2".into());
        }
        if self.initial_experts == 0 || self.active_experts == 0 || self.active_experts > self.initial_experts {
            return bad(format!(
                "need 1 ≤ active_experts ≤ initial_experts, got {} and {}",
                self.active_experts, self.initial_experts
            ));
        }
        if !(self.init_scale > 0.0) {
            return bad("init_scale must be positive".into());
        }
        if !(self.retrieval_lambda >= 0.0) {
            return bad("retrieval_lambda must be non-negative".into());
        }
        if self.fusion_rank == 0 || self.fusion_rank > self.input_dim {
            return bad(format!("fusion_rank must be in 1..={}", self.input_dim));
        }
        let d = &self.dpmm;
        if !(d.alpha > 0.0 && d.base_var > 0.0 && d.obs_var > 0.0 && d.tau >= 0.0) {
            return bad("dpmm needs alpha, base_var, obs_var > 0 and tau ≥ 0".into());
        }
        let c = &self.control;
        if [c.kp, c.ki, c.kd, c.noise_var].iter().any(|v| !(*v >= 0.0)) {
            return bad("control gains and noise must be non-negative".into());
        }
        if c.plan_budget == 0 {
            return bad("plan_budget must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub weight_bounds: [f64; 2],
    pub weight_step: f64,
    pub seed: u64,
    pub alpha0: f64,
    pub gamma0: f64,
    /// Steps between weight adaptations; 0 keeps α and γ fixed.
    pub adapt_every: usize,
    /// Skip every differentiable update and optimise only the control terms.
    pub control_only: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.02,
            batch: 1,
            weight_bounds: [0.1, 10.0],
            weight_step: 0.05,
            seed: 0,
            alpha0: 1.0,
            gamma0: 1.0,
            adapt_every: 0,
            control_only: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DraeError::Config(m));
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch == 0 {
            return bad("batch must be at least 1".into());
        }
        let [lo, hi] = self.weight_bounds;
        if !(lo > 0.0 && lo <= hi) {
            return bad(format!("weight_bounds must satisfy 0 < lo ≤ hi, got [{lo}, {hi}]"));
        }
        if !(self.weight_step > 0.0) {
            return bad("weight_step must be positive".into());
        }
        if !(self.alpha0 >= 0.0 && self.gamma0 >= 0.0) {
            return bad("alpha0 and gamma0 must be non-negative".into());
        }
        Ok(())
    }
}
