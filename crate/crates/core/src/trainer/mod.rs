//! Six-term objective with adaptive weights, gradient updates and the full
//! online system that ties routing, retrieval, task clustering and control
//! together.

mod checkpoint;
mod config;
mod system;

pub use checkpoint::{SystemCheckpoint, SYSTEM_CHECKPOINT_VERSION};
pub use config::{ControlConfig, DpmmConfig, SystemConfig, TrainConfig};
pub use system::{compute_losses, DraeSystem, SampleEval, StepReport, SystemGrad, TrainRecord};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, DraeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_reflex: f64,
    pub l_schema: f64,
    pub l_moe: f64,
    pub l_prag: f64,
    pub l_hyper: f64,
    pub l_dpmm: f64,
    pub alpha_t: f64,
    pub gamma_t: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Builds a breakdown whose `total` recomposes from the parts.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        l_reflex: f64,
        l_schema: f64,
        l_moe: f64,
        l_prag: f64,
        l_hyper: f64,
        l_dpmm: f64,
        alpha_t: f64,
        gamma_t: f64,
    ) -> Self {
        let mut b = Self { l_reflex, l_schema, l_moe, l_prag, l_hyper, l_dpmm, alpha_t, gamma_t, total: 0.0 };
        b.total = b.recompose();
        b
    }

    pub fn recompose(&self) -> f64 {
        self.l_reflex
            + self.l_schema
            + self.alpha_t * (self.l_moe + self.l_prag)
            + self.gamma_t * (self.l_hyper + self.l_dpmm)
    }

    pub fn predictive(&self) -> f64 {
        self.l_moe + self.l_prag
    }

    pub fn meta(&self) -> f64 {
        self.l_hyper + self.l_dpmm
    }

    /// Component-wise mean; weights are taken from the last entry.
    pub fn mean(items: &[LossBreakdown]) -> Option<Self> {
        let last = items.last()?;
        let n = items.len() as f64;
        let avg = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        Some(Self::new(
            avg(|b| b.l_reflex),
            avg(|b| b.l_schema),
            avg(|b| b.l_moe),
            avg(|b| b.l_prag),
            avg(|b| b.l_hyper),
            avg(|b| b.l_dpmm),
            last.alpha_t,
            last.gamma_t,
        ))
    }
}

/// Multiplicative weight update driven by the relative excess of validation
/// losses over reference losses, clamped to `bounds`.
pub fn adapt_weights(
    prev: (f64, f64),
    val_losses: &LossBreakdown,
    ref_losses: &LossBreakdown,
    step: f64,
    bounds: [f64; 2],
) -> Result<(f64, f64)> {
    if !(step > 0.0) {
        return Err(DraeError::InvalidParameter(format!("weight step must be positive, got {step}")));
    }
    let update = |w: f64, val: f64, reference: f64| {
        let drive = (val - reference) / reference.max(1e-8);
        (w * (step * drive).exp()).clamp(bounds[0], bounds[1])
    };
    Ok((
        update(prev.0, val_losses.predictive(), ref_losses.predictive()),
        update(prev.1, val_losses.meta(), ref_losses.meta()),
    ))
}

/// `p ← p − lr·g`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(shape_err("gradient", params.len(), grads.len()));
    }
    if !(lr > 0.0) {
        return Err(DraeError::InvalidParameter(format!("learning rate must be positive, got {lr}")));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

/// Largest relative error `|a − n| / (|a| + |n| + 1e-12)` between `analytic`
/// and central differences of `loss`, over `coords` (all when `None`).
pub fn grad_check<F>(mut loss: F, params: &[f64], analytic: &[f64], epsilon: f64, coords: Option<&[usize]>) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(DraeError::InvalidParameter(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    if params.len() != analytic.len() {
        return Err(shape_err("analytic gradient", params.len(), analytic.len()));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for &i in coords {
        let orig = p[i];
        p[i] = orig + epsilon;
        let up = loss(&p);
        p[i] = orig - epsilon;
        let down = loss(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic[i];
        worst = worst.max((a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{softmax, Rng};

    #[test]
    fn total_recomposes() {
        let b = LossBreakdown::new(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0);
        assert_eq!(b.total, 6.0);
        let b = LossBreakdown::new(0.3, 0.5, 1.7, 0.2, 0.05, 3.1, 0.4, 2.5);
        assert!((b.total - (0.3 + 0.5 + 0.4 * 1.9 + 2.5 * 3.15)).abs() < 1e-12);
    }

    #[test]
    fn adapt_zero_drive() {
        let b = LossBreakdown::new(0.0, 0.0, 1.0, 2.0, 0.5, 0.5, 1.0, 1.0);
        assert_eq!(adapt_weights((1.3, 0.7), &b, &b, 0.1, [0.1, 10.0]).unwrap(), (1.3, 0.7));
    }

    #[test]
    fn adapt_doubled_loss() {
        let reference = LossBreakdown::new(0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0);
        let val = LossBreakdown::new(0.0, 0.0, 2.0, 2.0, 1.0, 1.0, 1.0, 1.0);
        let (a, g) = adapt_weights((2.0, 2.0), &val, &reference, 0.1, [0.1, 10.0]).unwrap();
        assert!((a - 2.0 * 0.1f64.exp()).abs() < 1e-15);
        assert_eq!(g, 2.0);
        let (a, _) = adapt_weights((9.9, 1.0), &val, &reference, 0.1, [0.1, 10.0]).unwrap();
        assert_eq!(a, 10.0);
        assert!(adapt_weights((1.0, 1.0), &val, &reference, 0.0, [0.1, 10.0]).is_err());
    }

    #[test]
    fn sgd_examples() {
        let mut p = vec![1.0];
        sgd_step(&mut p, &[2.0], 0.1).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
        let mut q = vec![0.5, -1.0];
        sgd_step(&mut q, &[0.0, 0.0], 0.3).unwrap();
        assert_eq!(q, vec![0.5, -1.0]);
        assert!(sgd_step(&mut q, &[1.0], 0.1).is_err());
    }

    #[test]
    fn sgd_quadratic_contraction() {
        // ‖p − p*‖² has gradient 2(p − p*), so the error contracts by (1 − 2lr)
        let target = [1.0, -2.0, 0.5];
        let mut p = vec![4.0, 1.0, -1.0];
        let lr = 0.05;
        let e0: Vec<f64> = p.iter().zip(&target).map(|(a, b)| a - b).collect();
        for t in 1..=50 {
            let g: Vec<f64> = p.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            sgd_step(&mut p, &g, lr).unwrap();
            for i in 0..3 {
                let expected = e0[i] * (1.0 - 2.0 * lr).powi(t);
                assert!((p[i] - target[i] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grad_check_linear_is_exact() {
        let w = [0.3, -1.2, 2.5];
        let f = |p: &[f64]| p.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let err = grad_check(f, &[1.0, 2.0, -0.5], &w, 1e-5, None).unwrap();
        assert!(err < 1e-9);
        assert!(grad_check(f, &[1.0, 2.0, -0.5], &w, 1e-2, None).is_err());
    }

    fn softmax_ce(logits: &[f64], y: usize) -> f64 {
        -softmax(logits).unwrap()[y].ln()
    }

    #[test]
    fn grad_check_softmax_ce_and_fault() {
        let mut rng = Rng::new(12);
        let logits = rng.normal_vec(3, 1.0);
        let y = 1;
        let mut grad = softmax(&logits).unwrap();
        grad[y] -= 1.0;
        let err = grad_check(|p| softmax_ce(p, y), &logits, &grad, 1e-5, None).unwrap();
        assert!(err < 1e-6, "{err}");
        let bad: Vec<f64> = grad.iter().map(|g| g * 1.01).collect();
        let err = grad_check(|p| softmax_ce(p, y), &logits, &bad, 1e-5, None).unwrap();
        assert!(err > 1e-3, "{err}");
    }
}
