use serde::{Deserialize, Serialize};

use super::stream::TaskStream;
use crate::error::{DraeError, Result};
use crate::numerics::ols_slope;
use crate::trainer::DraeSystem;

/// Probability floor for log losses.
const P_FLOOR: f64 = 1e-300;
/// Fraction of the stream, from the end, used for the exponent fit.
const FIT_FRACTION: f64 = 0.8;

/// Anything that predicts class probabilities and learns from labels online.
pub trait OnlineLearner {
    fn predict(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn update(&mut self, x: &[f64], y: usize) -> Result<()>;
}

impl OnlineLearner for DraeSystem {
    fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        DraeSystem::predict(self, x)
    }

    fn update(&mut self, x: &[f64], y: usize) -> Result<()> {
        self.train_step(x, y).map(|_| ())
    }
}

/// Wraps a learner and never updates it.
#[derive(Debug, Clone)]
pub struct Frozen<L>(pub L);

impl<L: OnlineLearner> OnlineLearner for Frozen<L> {
    fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.0.predict(x)
    }

    fn update(&mut self, _x: &[f64], _y: usize) -> Result<()> {
        Ok(())
    }
}

/// Predicts with the stream's own Bayes posterior, stepping along with it.
#[derive(Debug, Clone)]
pub struct BayesOracle<'a> {
    stream: &'a TaskStream,
    t: usize,
}

impl<'a> BayesOracle<'a> {
    pub fn new(stream: &'a TaskStream) -> Self {
        Self { stream, t: 0 }
    }
}

impl OnlineLearner for BayesOracle<'_> {
    fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.stream.bayes_posterior(self.t.min(self.stream.len() - 1), x))
    }

    fn update(&mut self, _x: &[f64], _y: usize) -> Result<()> {
        self.t += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretLedger {
    pub per_step_loss: Vec<f64>,
    pub comparator_loss: Vec<f64>,
    pub cumulative_regret: Vec<f64>,
    pub path_length: f64,
    /// Least-squares slope of `ln R_t` against `ln t` over the final 80%.
    pub slope: f64,
}

/// Expected log loss of `p` under the Bayes posterior `target`.
pub(crate) fn expected_log_loss(target: &[f64], p: &[f64]) -> f64 {
    target.iter().zip(p).filter(|(q, _)| **q > 0.0).map(|(q, pi)| -q * pi.max(P_FLOOR).ln()).sum()
}

/// Predict-then-update pass over the stream.
///
/// Per-step loss is the expected log loss of the learner's prediction under
/// the Bayes posterior at that step; the comparator's loss is the posterior's
/// own entropy, so each regret increment is a KL divergence and never
/// negative.
pub fn measure_regret(learner: &mut dyn OnlineLearner, stream: &TaskStream) -> Result<RegretLedger> {
    if stream.len() < 100 {
        return Err(DraeError::InsufficientData(format!("regret needs ≥ 100 steps, got {}", stream.len())));
    }
    let n = stream.len();
    let mut per_step_loss = Vec::with_capacity(n);
    let mut comparator_loss = Vec::with_capacity(n);
    let mut cumulative_regret = Vec::with_capacity(n);
    let mut acc = 0.0;
    for (t, s) in stream.samples.iter().enumerate() {
        let target = stream.bayes_posterior(t, &s.x);
        let p = learner.predict(&s.x)?;
        let loss = expected_log_loss(&target, &p);
        let best = expected_log_loss(&target, &target);
        acc += (loss - best).max(0.0);
        per_step_loss.push(loss);
        comparator_loss.push(best);
        cumulative_regret.push(acc);
        learner.update(&s.x, s.y)?;
    }
    let slope = loglog_slope(&cumulative_regret);
    Ok(RegretLedger { per_step_loss, comparator_loss, cumulative_regret, path_length: stream.path_length(), slope })
}

/// Slope of `ln R_t` on `ln t` (t counted from 1) over the final 80% of the
/// series; non-positive entries are skipped and NaN comes back when fewer
/// than two remain.
pub fn loglog_slope(cumulative: &[f64]) -> f64 {
    let n = cumulative.len();
    let start = ((1.0 - FIT_FRACTION) * n as f64).floor() as usize;
    let (xs, ys): (Vec<f64>, Vec<f64>) = cumulative
        .iter()
        .enumerate()
        .skip(start)
        .filter(|(_, r)| **r > 0.0)
        .map(|(i, r)| (((i + 1) as f64).ln(), r.ln()))
        .unzip();
    if xs.len() < 2 {
        return f64::NAN;
    }
    ols_slope(&xs, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::stream::{gen_stream, StreamConfig};

    #[test]
    fn oracle_has_zero_regret() {
        let s = gen_stream(&StreamConfig::drifting(4, 500, 1e-3)).unwrap();
        let ledger = measure_regret(&mut BayesOracle::new(&s), &s).unwrap();
        assert_eq!(ledger.per_step_loss.len(), 500);
        assert_eq!(ledger.cumulative_regret.len(), 500);
        assert!(ledger.cumulative_regret[499].abs() < 1e-9);
    }

    #[test]
    fn short_stream_rejected() {
        let s = gen_stream(&StreamConfig::drifting(4, 50, 0.0)).unwrap();
        assert!(measure_regret(&mut BayesOracle::new(&s), &s).is_err());
    }

    #[test]
    fn slope_of_power_law() {
        let r: Vec<f64> = (1..=1000).map(|t| 3.0 * (t as f64).powf(0.5)).collect();
        assert!((loglog_slope(&r) - 0.5).abs() < 1e-12);
        let lin: Vec<f64> = (1..=1000).map(|t| 0.2 * t as f64).collect();
        assert!((loglog_slope(&lin) - 1.0).abs() < 1e-12);
    }
}
