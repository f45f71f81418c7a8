use serde::{Deserialize, Serialize};

use super::regret::OnlineLearner;
use super::stream::TaskStream;
use crate::error::{DraeError, Result};
use crate::rsho::argmax;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingReport {
    /// `accuracy[i][j]`: held-out accuracy on task `i` after finishing segment `j`.
    pub accuracy: Vec<Vec<f64>>,
    pub forgetting: f64,
}

/// Mean over all but the last task of the drop from the best accuracy seen
/// since the task was learned to the final accuracy.
pub fn forgetting_score(accuracy: &[Vec<f64>]) -> Result<f64> {
    let s = accuracy.len();
    if s < 2 {
        return Err(DraeError::InsufficientData(format!("forgetting needs ≥ 2 tasks, got {s}")));
    }
    if accuracy.iter().any(|row| row.len() != s) {
        return Err(DraeError::Shape("accuracy matrix must be square".into()));
    }
    let total: f64 = (0..s - 1)
        .map(|i| {
            let best = accuracy[i][i..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (best - accuracy[i][s - 1]).max(0.0)
        })
        .sum();
    Ok(total / (s - 1) as f64)
}

pub fn accuracy<L: OnlineLearner + ?Sized>(learner: &L, points: &[(Vec<f64>, usize)]) -> Result<f64> {
    if points.is_empty() {
        return Err(DraeError::InsufficientData("accuracy over an empty set".into()));
    }
    let mut hits = 0usize;
    for (x, y) in points {
        hits += usize::from(argmax(&learner.predict(x)?) == *y);
    }
    Ok(hits as f64 / points.len() as f64)
}

/// Trains through the stream segment by segment and evaluates every task's
/// held-out set after each segment.
///
/// `after_step` sees every step index so callers can log alongside.
pub fn measure_forgetting_with<L: OnlineLearner + ?Sized>(
    learner: &mut L,
    stream: &TaskStream,
    mut after_step: impl FnMut(&mut L, usize) -> Result<()>,
) -> Result<ForgettingReport> {
    let s = stream.schedule.len();
    if s < 2 {
        return Err(DraeError::InsufficientData(format!("forgetting needs ≥ 2 tasks, got {s}")));
    }
    if stream.holdout.iter().any(Vec::is_empty) {
        return Err(DraeError::InsufficientData("every task needs held-out points".into()));
    }
    let mut acc = vec![vec![0.0; s]; s];
    let mut t = 0usize;
    for (j, &(_, steps)) in stream.schedule.iter().enumerate() {
        for _ in 0..steps {
            let sample = &stream.samples[t];
            learner.update(&sample.x, sample.y)?;
            after_step(learner, t)?;
            t += 1;
        }
        for (i, &(task, _)) in stream.schedule.iter().enumerate() {
            acc[i][j] = accuracy(&*learner, &stream.holdout[task])?;
        }
    }
    let forgetting = forgetting_score(&acc)?;
    Ok(ForgettingReport { accuracy: acc, forgetting })
}

pub fn measure_forgetting(learner: &mut dyn OnlineLearner, stream: &TaskStream) -> Result<ForgettingReport> {
    measure_forgetting_with(learner, stream, |_, _| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_constant_has_no_forgetting() {
        let a = vec![vec![0.7, 0.7, 0.7], vec![0.2, 0.2, 0.2], vec![0.9, 0.9, 0.9]];
        assert_eq!(forgetting_score(&a).unwrap(), 0.0);
    }

    #[test]
    fn max_over_history() {
        let a = vec![vec![0.9, 0.5, 0.6], vec![0.0, 0.8, 0.4], vec![0.0, 0.0, 1.0]];
        // task 0: 0.9 − 0.6, task 1: 0.8 − 0.4
        assert!((forgetting_score(&a).unwrap() - 0.35).abs() < 1e-12);
        assert!(forgetting_score(&a[..1]).is_err());
    }
}
