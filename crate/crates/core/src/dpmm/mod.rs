//! Streaming Dirichlet-process mixture over task embeddings.
//!
//! Assignment is sequential Chinese-restaurant sampling with conjugate
//! diagonal-Gaussian clusters and a known observation variance. The mixing
//! weights are never stored; cluster counts carry them.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, DraeError, Result};
use crate::numerics::{diag_normal_logpdf, gauss_kl, log_sum_exp, softmax_unchecked, Rng};

mod ari;

pub use ari::adjusted_rand_index;

/// Default expansion threshold on the per-dimension KL.
pub const DEFAULT_TAU: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cluster {
    pub id: usize,
    pub count: usize,
    pub post_mean: Vec<f64>,
    pub post_var: Vec<f64>,
    pub created_at: usize,
}

impl Cluster {
    /// Variance of the posterior predictive for a new observation.
    pub fn predictive_var(&self, obs_var: &[f64]) -> Vec<f64> {
        self.post_var.iter().zip(obs_var).map(|(p, o)| p + o).collect()
    }

    fn absorb(&mut self, z: &[f64], obs_var: &[f64]) {
        for i in 0..z.len() {
            let prec = 1.0 / self.post_var[i] + 1.0 / obs_var[i];
            let var = 1.0 / prec;
            self.post_mean[i] = var * (self.post_mean[i] / self.post_var[i] + z[i] / obs_var[i]);
            self.post_var[i] = var;
        }
        self.count += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionDecision {
    pub spawn: bool,
    /// Smallest per-dimension KL to an existing cluster; `+∞` with no clusters.
    pub min_kl: f64,
    pub nearest_cluster: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpmmState {
    pub clusters: Vec<Cluster>,
    pub alpha: f64,
    pub base_mean: Vec<f64>,
    pub base_var: Vec<f64>,
    pub obs_var: Vec<f64>,
    pub tau: f64,
    pub total_n: usize,
}

impl DpmmState {
    pub fn new(alpha: f64, base_mean: Vec<f64>, base_var: Vec<f64>, obs_var: Vec<f64>, tau: f64) -> Result<Self> {
        let state = Self { clusters: Vec::new(), alpha, base_mean, base_var, obs_var, tau, total_n: 0 };
        state.validate()?;
        Ok(state)
    }

    /// Zero-mean base with the same variance in every dimension.
    pub fn isotropic(dim: usize, alpha: f64, base_var: f64, obs_var: f64, tau: f64) -> Result<Self> {
        Self::new(alpha, vec![0.0; dim], vec![base_var; dim], vec![obs_var; dim], tau)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.base_mean.len();
        if d == 0 {
            return Err(DraeError::InvalidParameter("embedding dimension must be positive".into()));
        }
        if self.base_var.len() != d || self.obs_var.len() != d {
            return Err(DraeError::Shape("base/observation variances must match the mean".into()));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(DraeError::InvalidParameter(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.tau >= 0.0) {
            return Err(DraeError::InvalidParameter(format!("tau must be non-negative, got {}", self.tau)));
        }
        if self.base_var.iter().chain(&self.obs_var).any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(DraeError::InvalidParameter("variances must be strictly positive".into()));
        }
        let counted: usize = self.clusters.iter().map(|c| c.count).sum();
        if counted != self.total_n {
            return Err(DraeError::InvalidInput(format!(
                "cluster counts sum to {counted} but total_n is {}",
                self.total_n
            )));
        }
        for (i, c) in self.clusters.iter().enumerate() {
            if c.id != i || c.count == 0 || c.post_mean.len() != d || c.post_var.len() != d {
                return Err(DraeError::InvalidInput(format!("cluster {i} is malformed")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.base_mean.len()
    }

    fn check(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim() {
            return Err(shape_err("task embedding", self.dim(), z.len()));
        }
        Ok(())
    }

    fn base_predictive_var(&self) -> Vec<f64> {
        self.base_var.iter().zip(&self.obs_var).map(|(b, o)| b + o).collect()
    }

    /// Prior seating weights `[n_1, …, n_K, α] / (N + α)`.
    pub fn prior_weights(&self) -> Vec<f64> {
        let denom = self.total_n as f64 + self.alpha;
        let mut w: Vec<f64> = self.clusters.iter().map(|c| c.count as f64 / denom).collect();
        w.push(self.alpha / denom);
        w
    }

    /// Unnormalised log seating weights, existing clusters first and the new table last.
    fn log_weights(&self, z: &[f64]) -> Vec<f64> {
        let mut lw: Vec<f64> = self
            .clusters
            .iter()
            .map(|c| {
                (c.count as f64).ln() + diag_normal_logpdf(z, &c.post_mean, &c.predictive_var(&self.obs_var))
            })
            .collect();
        lw.push(self.alpha.ln() + diag_normal_logpdf(z, &self.base_mean, &self.base_predictive_var()));
        lw
    }

    /// Posterior seating probabilities for `z`; the last entry is a new cluster.
    pub fn assignment_probs(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check(z)?;
        Ok(softmax_unchecked(&self.log_weights(z)))
    }

    /// Most probable existing cluster for `z`, ignoring the new-table option;
    /// `None` before the first observation. Ties go to the lower id.
    pub fn map_cluster(&self, z: &[f64]) -> Result<Option<usize>> {
        self.check(z)?;
        let lw = self.log_weights(z);
        let existing = &lw[..self.clusters.len()];
        Ok(existing.iter().enumerate().fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((i, v)),
        }).map(|(i, _)| i))
    }
}

/// Seats `z` by sampling the CRP posterior and updates the chosen cluster.
pub fn assign(state: &mut DpmmState, z: &[f64], rng: &mut Rng) -> Result<usize> {
    let probs = state.assignment_probs(z)?;
    let k = rng.categorical(&probs);
    if k == state.clusters.len() {
        let mut c = Cluster {
            id: k,
            count: 0,
            post_mean: state.base_mean.clone(),
            post_var: state.base_var.clone(),
            created_at: state.total_n,
        };
        c.absorb(z, &state.obs_var);
        state.clusters.push(c);
    } else {
        let obs_var = state.obs_var.clone();
        state.clusters[k].absorb(z, &obs_var);
    }
    state.total_n += 1;
    Ok(k)
}

/// Log posterior predictive density of `z` under the CRP mixture.
pub fn predictive_loglik(state: &DpmmState, z: &[f64]) -> Result<f64> {
    state.check(z)?;
    let denom = (state.total_n as f64 + state.alpha).ln();
    let terms: Vec<f64> = state.log_weights(z).into_iter().map(|lw| lw - denom).collect();
    Ok(log_sum_exp(&terms))
}

/// Compares `N(z, obs_var)` against every cluster's predictive distribution.
///
/// `min_kl` is divided by the embedding dimension so one threshold serves
/// any dimension.
pub fn expansion_check(state: &DpmmState, z: &[f64]) -> Result<ExpansionDecision> {
    state.check(z)?;
    let mut best: Option<(usize, f64)> = None;
    for c in &state.clusters {
        let kl = gauss_kl(z, &state.obs_var, &c.post_mean, &c.predictive_var(&state.obs_var))?
            / state.dim() as f64;
        if best.is_none_or(|(_, b)| kl < b) {
            best = Some((c.id, kl));
        }
    }
    Ok(match best {
        None => ExpansionDecision { spawn: true, min_kl: f64::INFINITY, nearest_cluster: None },
        Some((id, kl)) => ExpansionDecision { spawn: kl > state.tau, min_kl: kl, nearest_cluster: Some(id) },
    })
}
