//! Synthetic task streams and the measurements taken on them: dynamic
//! regret against the Bayes comparator, forgetting, knowledge stability,
//! sample-complexity scaling and gating convergence.

mod complexity;
mod forgetting;
mod regret;
mod stream;

pub use complexity::{generalization_gap, sample_complexity_sweep, Labelled, SweepOptions, SweepRow, SweepTable};
pub use forgetting::{accuracy, forgetting_score, measure_forgetting, measure_forgetting_with, ForgettingReport};
pub use regret::{loglog_slope, measure_regret, BayesOracle, Frozen, OnlineLearner, RegretLedger};
pub use stream::{gen_stream, prototype_corpus, Sample, StreamConfig, TaskSpec, TaskStream};

use serde::{Deserialize, Serialize};

use crate::error::{DraeError, Result};
use crate::moe::{convergence_gap, GatingState};
use crate::numerics::ols_slope;
use crate::trainer::{DraeSystem, TrainRecord};

/// Headline numbers of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub steps: usize,
    pub slope: f64,
    pub final_regret: f64,
    /// Absent for single-task streams.
    pub forgetting: Option<f64>,
    pub stability_mean: f64,
    #[serde(rename = "P_T")]
    pub path_length: f64,
    pub online_accuracy: f64,
    pub final_accuracy: Option<f64>,
    #[serde(rename = "K")]
    pub k: usize,
    pub cluster_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub regret: RegretLedger,
    pub forgetting: Option<ForgettingReport>,
    pub summary: RunSummary,
}

/// Full training pass with every measurement taken along the way.
///
/// Each step predicts (for regret), trains, and hands its log record to
/// `log`; held-out accuracy on every task is taken at each segment end.
pub fn run_stream(
    system: &mut DraeSystem,
    stream: &TaskStream,
    mut log: impl FnMut(&TrainRecord) -> Result<()>,
) -> Result<RunOutcome> {
    if stream.len() < 100 {
        return Err(DraeError::InsufficientData(format!("a run needs ≥ 100 steps, got {}", stream.len())));
    }
    let segments = stream.schedule.len();
    let with_holdout = segments >= 2 && stream.holdout.iter().all(|h| !h.is_empty());
    let mut per_step_loss = Vec::with_capacity(stream.len());
    let mut comparator_loss = Vec::with_capacity(stream.len());
    let mut cumulative = Vec::with_capacity(stream.len());
    let mut acc_matrix = vec![vec![0.0; segments]; segments];
    let mut hits = 0usize;
    let mut total = 0.0;
    let mut t = 0usize;
    for (j, &(_, steps)) in stream.schedule.iter().enumerate() {
        for _ in 0..steps {
            let s = &stream.samples[t];
            let target = stream.bayes_posterior(t, &s.x);
            let p = system.predict(&s.x)?;
            let loss = regret::expected_log_loss(&target, &p);
            let best = regret::expected_log_loss(&target, &target);
            total += (loss - best).max(0.0);
            per_step_loss.push(loss);
            comparator_loss.push(best);
            cumulative.push(total);
            hits += usize::from(crate::rsho::argmax(&p) == s.y);
            let report = system.train_step(&s.x, s.y)?;
            log(&system.record(&report))?;
            t += 1;
        }
        if with_holdout {
            for (i, &(task, _)) in stream.schedule.iter().enumerate() {
                acc_matrix[i][j] = accuracy(system, &stream.holdout[task])?;
            }
        }
    }
    let forgetting = if with_holdout {
        Some(ForgettingReport { forgetting: forgetting_score(&acc_matrix)?, accuracy: acc_matrix })
    } else {
        None
    };
    let regret = RegretLedger {
        slope: loglog_slope(&cumulative),
        per_step_loss,
        comparator_loss,
        cumulative_regret: cumulative,
        path_length: stream.path_length(),
    };
    let final_accuracy = match &forgetting {
        Some(f) => Some(f.accuracy.iter().map(|row| row[segments - 1]).sum::<f64>() / segments as f64),
        None => None,
    };
    let summary = RunSummary {
        seed: system.train.seed,
        steps: stream.len(),
        slope: regret.slope,
        final_regret: total,
        forgetting: forgetting.as_ref().map(|f| f.forgetting),
        stability_mean: system.stability_mean(),
        path_length: regret.path_length,
        online_accuracy: hits as f64 / stream.len() as f64,
        final_accuracy,
        k: system.k(),
        cluster_count: system.cluster_count(),
    };
    Ok(RunOutcome { regret, forgetting, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// Distance of each gating snapshot to the last one.
    pub gaps: Vec<f64>,
    /// Envelope constant fitted on the first half: `max_t t·gap_t`.
    pub constant: f64,
    /// Whether the second half stays under `constant / t`.
    pub envelope_holds: bool,
    /// Log-log slope of the gap over the first half.
    pub decay_slope: f64,
}

/// Deterministic full-batch descent of the gating network on a fixed batch
/// with step `lr0 / t`; experts and fusion are held fixed.
///
/// Single-sample gradients would add a `1/√t` noise floor on top of the
/// step-size decay, so the batch gradient is used.
pub fn gating_convergence(
    system: &DraeSystem,
    batch: &[(Vec<f64>, usize)],
    steps: usize,
    lr0: f64,
) -> Result<ConvergenceReport> {
    if batch.is_empty() {
        return Err(DraeError::EmptyBatch);
    }
    if steps < 4 || !(lr0 > 0.0) {
        return Err(DraeError::InvalidParameter("need ≥ 4 steps and a positive base step".into()));
    }
    let mut sys = system.clone();
    let mut history: Vec<GatingState> = Vec::with_capacity(steps + 1);
    history.push(sys.gating.clone());
    let scale = 1.0 / batch.len() as f64;
    for t in 1..=steps {
        let mut grad = sys.zero_grad();
        for (x, y) in batch {
            let eval = sys.evaluate(x)?;
            sys.accumulate_grad(&eval, x, *y, (scale, 0.0), None, &mut grad)?;
        }
        let lr = lr0 / t as f64;
        for (w, g) in sys.gating.weights.as_mut_slice().iter_mut().zip(grad.gating_w.as_slice()) {
            *w -= lr * g;
        }
        for (b, g) in sys.gating.biases.iter_mut().zip(&grad.gating_b) {
            *b -= lr * g;
        }
        history.push(sys.gating.clone());
    }
    let gaps = convergence_gap(&history)?;
    let half = gaps.len() / 2;
    let constant = (1..half).map(|t| t as f64 * gaps[t]).fold(0.0, f64::max);
    let envelope_holds = (half..gaps.len()).all(|t| gaps[t] <= constant / t as f64 + 1e-15);
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        (1..half).filter(|&t| gaps[t] > 0.0).map(|t| ((t as f64).ln(), gaps[t].ln())).unzip();
    let decay_slope = if xs.len() >= 2 { ols_slope(&xs, &ys) } else { f64::NAN };
    Ok(ConvergenceReport { gaps, constant, envelope_holds, decay_slope })
}
