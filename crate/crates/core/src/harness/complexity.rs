use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::regret::OnlineLearner;
use crate::error::{DraeError, Result};
use crate::numerics::ols_slope;

const P_FLOOR: f64 = 1e-300;

pub type Labelled = Vec<(Vec<f64>, usize)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub seeds: usize,
    /// Allowed failure frequency across seeds.
    pub delta: f64,
    pub n_min: usize,
    pub n_max: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { seeds: 10, delta: 0.1, n_min: 8, n_max: 1 << 14 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Least-squares slope of `ln n` against `ln(1/ε)`.
    pub slope: f64,
}

fn mean_log_loss<L: OnlineLearner + ?Sized>(learner: &L, data: &[(Vec<f64>, usize)]) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in data {
        total -= learner.predict(x)?[*y].max(P_FLOOR).ln();
    }
    Ok(total / data.len() as f64)
}

/// One online pass over `train`, then `|test log loss − train log loss|`
/// for the final model.
pub fn generalization_gap<L: OnlineLearner + ?Sized>(learner: &mut L, train: &[(Vec<f64>, usize)], test: &[(Vec<f64>, usize)]) -> Result<f64> {
    if train.is_empty() || test.is_empty() {
        return Err(DraeError::InsufficientData("gap needs non-empty train and test sets".into()));
    }
    for (x, y) in train {
        learner.update(x, *y)?;
    }
    Ok((mean_log_loss(learner, test)? - mean_log_loss(learner, train)?).abs())
}

/// Smallest training size per tolerance at which the generalisation gap is
/// within `ε` for at least a `1 − δ` fraction of seeds.
///
/// `data(seed)` returns a training pool and a test set; size `n` trains on
/// the first `n` pool entries, so sizes are nested per seed. Sizes are found
/// by binary search on `[n_min, n_max]`, and gaps are cached across
/// tolerances.
pub fn sample_complexity_sweep<F, G>(
    mut make_learner: F,
    mut data: G,
    epsilons: &[f64],
    opts: &SweepOptions,
) -> Result<SweepTable>
where
    F: FnMut(u64) -> Result<Box<dyn OnlineLearner>>,
    G: FnMut(u64) -> Result<(Labelled, Labelled)>,
{
    if epsilons.is_empty() || epsilons.iter().any(|e| !(*e > 0.0 && *e < 0.5)) {
        return Err(DraeError::InvalidParameter("every ε must lie in (0, 0.5)".into()));
    }
    if opts.seeds == 0 || !(0.0..1.0).contains(&opts.delta) || opts.n_min == 0 || opts.n_min > opts.n_max {
        return Err(DraeError::InvalidParameter("sweep needs seeds ≥ 1, δ in [0, 1) and 1 ≤ n_min ≤ n_max".into()));
    }
    let sets: Vec<(Labelled, Labelled)> = (0..opts.seeds as u64).map(&mut data).collect::<Result<_>>()?;
    if sets.iter().any(|(train, _)| train.len() < opts.n_max) {
        return Err(DraeError::InsufficientData(format!("training pools must hold n_max = {} points", opts.n_max)));
    }
    let need = ((1.0 - opts.delta) * opts.seeds as f64).ceil() as usize;
    let mut cache: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut gaps_at = |n: usize| -> Result<Vec<f64>> {
        if let Some(g) = cache.get(&n) {
            return Ok(g.clone());
        }
        let mut gaps = Vec::with_capacity(sets.len());
        for (seed, (train, test)) in sets.iter().enumerate() {
            let mut learner = make_learner(seed as u64)?;
            gaps.push(generalization_gap(learner.as_mut(), &train[..n], test)?);
        }
        cache.insert(n, gaps.clone());
        Ok(gaps)
    };
    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let ok = |gaps: &[f64]| gaps.iter().filter(|g| **g <= eps).count() >= need;
        if !ok(&gaps_at(opts.n_max)?) {
            return Err(DraeError::InsufficientData(format!("ε = {eps} not reached by n_max = {}", opts.n_max)));
        }
        let (mut lo, mut hi) = (opts.n_min, opts.n_max);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if ok(&gaps_at(mid)?) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        rows.push(SweepRow { epsilon: eps, n: lo });
    }
    let xs: Vec<f64> = rows.iter().map(|r| (1.0 / r.epsilon).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let slope = if rows.len() >= 2 { ols_slope(&xs, &ys) } else { f64::NAN };
    Ok(SweepTable { rows, slope })
}
