//! Sparse mixture of experts: softmax gating, top-m activation, the
//! gate-weighted expert mixture and non-destructive expert growth.

mod checkpoint;
mod expert;

pub(crate) use checkpoint::check_version;
pub use checkpoint::{ExpertRecord, MoeCheckpoint, MOE_CHECKPOINT_VERSION};
pub use expert::{Expert, ExpertGrad};
pub(crate) use expert::ExpertTrace;

use crate::dpmm::ExpansionDecision;
use crate::error::{shape_err, DraeError, Result};
use crate::numerics::{softmax_unchecked, Mat, Rng};

/// Standard deviation of the noise added to a cloned expert.
pub const SPAWN_NOISE: f64 = 0.01;

/// Gating network: one weight row and bias per expert.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingState {
    pub weights: Mat,
    pub biases: Vec<f64>,
    pub m: usize,
}

impl GatingState {
    /// Zero-initialised gating over `k` experts.
    pub fn new(k: usize, input_dim: usize, m: usize) -> Result<Self> {
        if k == 0 || input_dim == 0 {
            return Err(DraeError::InvalidParameter("gating needs k ≥ 1 and input_dim ≥ 1".into()));
        }
        if m == 0 || m > k {
            return Err(DraeError::InvalidParameter(format!("active count m={m} outside 1..={k}")));
        }
        Ok(Self { weights: Mat::zeros(k, input_dim), biases: vec![0.0; k], m })
    }

    pub fn k(&self) -> usize {
        self.weights.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn logits(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.input_dim() {
            return Err(shape_err("gating input", self.input_dim(), u.len()));
        }
        Ok(self.logits_unchecked(u))
    }

    pub(crate) fn logits_unchecked(&self, u: &[f64]) -> Vec<f64> {
        let mut l = self.weights.mv(u);
        for (li, b) in l.iter_mut().zip(&self.biases) {
            *li += b;
        }
        l
    }

    pub fn param_count(&self) -> usize {
        self.weights.as_slice().len() + self.biases.len()
    }
}

/// Experts selected for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSet {
    /// Ordered by decreasing gate value, ties by ascending id.
    pub expert_ids: Vec<usize>,
    pub gate_values: Vec<f64>,
    /// The m-th largest gate value.
    pub threshold: f64,
}

/// `softmax(W x + b)` over all K experts.
pub fn gate(state: &GatingState, x: &[f64]) -> Result<Vec<f64>> {
    Ok(softmax_unchecked(&state.logits(x)?))
}

/// Gating over the concatenated input `[x; d]`.
pub fn gate_enhanced(state: &GatingState, x: &[f64], d: &[f64]) -> Result<Vec<f64>> {
    if x.len() + d.len() != state.input_dim() {
        return Err(shape_err("enhanced gating input", state.input_dim(), x.len() + d.len()));
    }
    gate(state, &concat(x, d))
}

pub(crate) fn concat(x: &[f64], d: &[f64]) -> Vec<f64> {
    let mut u = Vec::with_capacity(x.len() + d.len());
    u.extend_from_slice(x);
    u.extend_from_slice(d);
    u
}

/// Keeps the `m` largest gates; ties go to the lower expert id.
pub fn select_top_m(gates: &[f64], m: usize) -> Result<ActiveSet> {
    if m == 0 || m > gates.len() {
        return Err(DraeError::InvalidParameter(format!(
            "active count m={m} outside 1..={}",
            gates.len()
        )));
    }
    let mut order: Vec<usize> = (0..gates.len()).collect();
    // stable sort keeps ascending ids among equal gates
    order.sort_by(|&a, &b| gates[b].total_cmp(&gates[a]));
    order.truncate(m);
    let gate_values: Vec<f64> = order.iter().map(|&i| gates[i]).collect();
    Ok(ActiveSet { threshold: gate_values[m - 1], expert_ids: order, gate_values })
}

fn lookup(experts: &[Expert], id: usize) -> Result<&Expert> {
    experts.get(id).filter(|e| e.id == id).ok_or(DraeError::MissingExpert(id))
}

/// Gate-weighted mixture of the active experts' outputs, gates renormalised
/// over the active set.
pub fn forward(active: &ActiveSet, experts: &[Expert], x: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = active.gate_values.iter().sum();
    if !(total > 0.0) {
        return Err(DraeError::InvalidInput("active gates sum to zero".into()));
    }
    let mut out: Option<Vec<f64>> = None;
    for (&id, &g) in active.expert_ids.iter().zip(&active.gate_values) {
        let f = lookup(experts, id)?.forward(x)?;
        let w = g / total;
        match out.as_mut() {
            None => out = Some(f.iter().map(|v| w * v).collect()),
            Some(acc) => {
                if acc.len() != f.len() {
                    return Err(shape_err("expert output", acc.len(), f.len()));
                }
                for (a, v) in acc.iter_mut().zip(&f) {
                    *a += w * v;
                }
            }
        }
    }
    out.ok_or_else(|| DraeError::InvalidInput("empty active set".into()))
}

/// Grows the expert pool by one when `decision.spawn` is set.
///
/// The newcomer clones the highest-gated expert (lowest id on ties) plus
/// N(0, 0.01²) noise and gets a zero gating row. Existing experts and gating
/// rows are left untouched. Returns whether an expert was added.
pub fn maybe_expand(
    decision: &ExpansionDecision,
    experts: &mut Vec<Expert>,
    gating: &mut GatingState,
    gates: &[f64],
    rng: &mut Rng,
) -> Result<bool> {
    if !decision.spawn {
        return Ok(false);
    }
    if gates.len() != experts.len() || gating.k() != experts.len() {
        return Err(shape_err("gate vector", experts.len(), gates.len()));
    }
    let parent = select_top_m(gates, 1)?.expert_ids[0];
    let mut child = experts[parent].clone();
    child.id = experts.len();
    child.owning_cluster = None;
    child.frozen = false;
    for part in child.params_mut() {
        for v in part.iter_mut() {
            *v += SPAWN_NOISE * rng.normal();
        }
    }
    gating.weights.push_row(&vec![0.0; gating.input_dim()])?;
    gating.biases.push(0.0);
    experts.push(child);
    Ok(true)
}

/// Distance of each snapshot's gating parameters to the final snapshot.
///
/// Rows added after a snapshot was taken are ignored for that snapshot.
pub fn convergence_gap(history: &[GatingState]) -> Result<Vec<f64>> {
    if history.len() < 2 {
        return Err(DraeError::InsufficientData(format!(
            "convergence gap needs at least 2 snapshots, got {}",
            history.len()
        )));
    }
    let last = &history[history.len() - 1];
    history
        .iter()
        .map(|snap| {
            if snap.input_dim() != last.input_dim() || snap.k() > last.k() {
                return Err(DraeError::Shape("gating snapshots are not comparable".into()));
            }
            let mut acc = 0.0;
            for k in 0..snap.k() {
                for (a, b) in snap.weights.row(k).iter().zip(last.weights.row(k)) {
                    acc += (a - b) * (a - b);
                }
                acc += (snap.biases[k] - last.biases[k]).powi(2);
            }
            Ok(acc.sqrt())
        })
        .collect()
}

/// Parameters of the active experts plus their gating rows and biases.
pub fn active_parameter_count(active: &ActiveSet, experts: &[Expert], gating: &GatingState) -> Result<usize> {
    let mut n = 0;
    for &id in &active.expert_ids {
        n += lookup(experts, id)?.param_count() + gating.input_dim() + 1;
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(k: usize, seed: u64) -> Vec<Expert> {
        let mut rng = Rng::new(seed);
        (0..k).map(|i| Expert::new_random(i, 3, 5, 4, 1.0, &mut rng)).collect()
    }

    #[test]
    fn zero_gating_is_uniform() {
        let g = GatingState::new(4, 3, 2).unwrap();
        let out = gate(&g, &[1.0, -5.0, 2.0]).unwrap();
        for v in out {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn gate_saturates() {
        let mut g = GatingState::new(2, 1, 1).unwrap();
        g.weights.set(0, 0, 10.0);
        g.weights.set(1, 0, -10.0);
        let out = gate(&g, &[1.0]).unwrap();
        assert!(out[0] >= 1.0 - 1e-8);
    }

    #[test]
    fn gate_matches_direct_softmax() {
        let mut g = GatingState::new(3, 2, 1).unwrap();
        g.weights = Mat::from_rows(&[vec![0.3, -1.0], vec![1.2, 0.4], vec![-0.7, 2.0]]).unwrap();
        g.biases = vec![0.1, -0.2, 0.05];
        let out = gate(&g, &[1.0, 0.0]).unwrap();
        let logits = [0.3 + 0.1, 1.2 - 0.2, -0.7 + 0.05];
        let z: f64 = logits.iter().map(|l: &f64| l.exp()).sum();
        for (o, l) in out.iter().zip(logits) {
            assert!((o - l.exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn gate_shape_errors() {
        let g = GatingState::new(3, 2, 1).unwrap();
        assert!(matches!(gate(&g, &[1.0]), Err(DraeError::Shape(_))));
        assert!(matches!(gate_enhanced(&g, &[1.0, 2.0], &[3.0]), Err(DraeError::Shape(_))));
        assert!(GatingState::new(3, 2, 4).is_err());
    }

    #[test]
    fn gate_enhanced_zero_extension() {
        let mut full = GatingState::new(3, 4, 2).unwrap();
        let mut half = GatingState::new(3, 2, 2).unwrap();
        let rows = [[0.5, -0.3], [1.1, 0.2], [-0.4, 0.9]];
        for (k, r) in rows.iter().enumerate() {
            full.weights.set(k, 0, r[0]);
            full.weights.set(k, 1, r[1]);
            full.weights.set(k, 2, 0.0);
            full.weights.set(k, 3, 0.0);
            half.weights.set(k, 0, r[0]);
            half.weights.set(k, 1, r[1]);
        }
        full.biases = vec![0.2, 0.0, -0.1];
        half.biases = full.biases.clone();
        let x = [0.7, -1.3];
        assert_eq!(gate_enhanced(&full, &x, &[0.0, 0.0]).unwrap(), gate(&half, &x).unwrap());
    }

    #[test]
    fn gate_enhanced_relabelling() {
        let mut rng = Rng::new(5);
        let mut g = GatingState::new(3, 5, 2).unwrap();
        g.weights = Mat::random(3, 5, 1.0, &mut rng);
        let x = [0.3, -0.2];
        let d = [1.0, 2.0, -0.5];
        let perm = [2usize, 0, 1];
        let mut gp = g.clone();
        let mut dp = [0.0; 3];
        for (new, &old) in perm.iter().enumerate() {
            dp[new] = d[old];
            for k in 0..3 {
                gp.weights.set(k, 2 + new, g.weights.get(k, 2 + old));
            }
        }
        let a = gate_enhanced(&g, &x, &d).unwrap();
        let b = gate_enhanced(&gp, &x, &dp).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-15);
        }
    }

    #[test]
    fn top_m_examples() {
        let a = select_top_m(&[0.5, 0.3, 0.2], 2).unwrap();
        assert_eq!(a.expert_ids, vec![0, 1]);
        assert_eq!(a.threshold, 0.3);
        let a = select_top_m(&[0.25; 4], 2).unwrap();
        assert_eq!(a.expert_ids, vec![0, 1]);
        assert!(matches!(select_top_m(&[0.5, 0.5], 3), Err(DraeError::InvalidParameter(_))));
        assert!(select_top_m(&[0.5, 0.5], 0).is_err());
    }

    #[test]
    fn forward_single_and_duplicate() {
        let experts = pool(3, 9);
        let x = [0.2, -0.4, 1.0];
        let single = ActiveSet { expert_ids: vec![1], gate_values: vec![0.3], threshold: 0.3 };
        assert_eq!(forward(&single, &experts, &x).unwrap(), experts[1].forward(&x).unwrap());

        let mut twin = experts.clone();
        twin[2] = Expert { id: 2, ..twin[0].clone() };
        let both = ActiveSet { expert_ids: vec![0, 2], gate_values: vec![0.5, 0.5], threshold: 0.5 };
        let out = forward(&both, &twin, &x).unwrap();
        for (a, b) in out.iter().zip(twin[0].forward(&x).unwrap()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_matches_componentwise_sum() {
        let experts = pool(3, 21);
        let x = [1.0, 0.5, -2.0];
        let active =
            ActiveSet { expert_ids: vec![2, 0, 1], gate_values: vec![0.5, 0.3, 0.2], threshold: 0.2 };
        let out = forward(&active, &experts, &x).unwrap();
        let mut expected = vec![0.0; 4];
        for (&id, &g) in active.expert_ids.iter().zip(&active.gate_values) {
            for (e, v) in expected.iter_mut().zip(experts[id].forward(&x).unwrap()) {
                *e += g * v;
            }
        }
        for (a, b) in out.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn forward_missing_expert() {
        let experts = pool(2, 1);
        let active = ActiveSet { expert_ids: vec![5], gate_values: vec![1.0], threshold: 1.0 };
        assert!(matches!(forward(&active, &experts, &[0.0; 3]), Err(DraeError::MissingExpert(5))));
    }

    #[test]
    fn expand_no_spawn_is_noop() {
        let mut experts = pool(3, 4);
        let mut gating = GatingState::new(3, 3, 2).unwrap();
        let (e0, g0) = (experts.clone(), gating.clone());
        let decision = ExpansionDecision { spawn: false, min_kl: 0.1, nearest_cluster: Some(0) };
        let mut rng = Rng::new(0);
        assert!(!maybe_expand(&decision, &mut experts, &mut gating, &[0.2, 0.5, 0.3], &mut rng).unwrap());
        assert_eq!(experts, e0);
        assert_eq!(gating, g0);
    }

    #[test]
    fn expand_spawn_keeps_old_experts() {
        let mut experts = pool(3, 4);
        let mut gating = GatingState::new(3, 3, 2).unwrap();
        gating.weights.set(1, 1, 0.7);
        let (e0, g0) = (experts.clone(), gating.clone());
        let decision = ExpansionDecision { spawn: true, min_kl: 9.0, nearest_cluster: Some(0) };
        let mut rng = Rng::new(0);
        assert!(maybe_expand(&decision, &mut experts, &mut gating, &[0.2, 0.5, 0.3], &mut rng).unwrap());
        assert_eq!(experts.len(), 4);
        assert_eq!(gating.k(), 4);
        assert_eq!(&experts[..3], &e0[..]);
        for k in 0..3 {
            assert_eq!(gating.weights.row(k), g0.weights.row(k));
        }
        assert!(gating.weights.row(3).iter().all(|v| *v == 0.0));
        assert_eq!(gating.biases[3], 0.0);
        // clone of the top-gated expert (id 1), perturbed
        let diff: Vec<f64> = experts[3]
            .flat_params()
            .iter()
            .zip(experts[1].flat_params())
            .map(|(a, b)| a - b)
            .collect();
        assert!(diff.iter().all(|d| d.abs() < 0.06));
        assert!(diff.iter().any(|d| *d != 0.0));
        assert_eq!(experts[3].id, 3);
    }

    #[test]
    fn convergence_gap_examples() {
        let g = GatingState::new(2, 2, 1).unwrap();
        assert_eq!(convergence_gap(&[g.clone(), g.clone(), g.clone()]).unwrap(), vec![0.0; 3]);
        let mut h = g.clone();
        h.weights.set(0, 1, 1.0);
        assert_eq!(convergence_gap(&[g.clone(), h]).unwrap(), vec![1.0, 0.0]);
        assert!(matches!(convergence_gap(&[g]), Err(DraeError::InsufficientData(_))));
    }

    #[test]
    fn convergence_gap_quadratic_sgd() {
        // f(w) = (a/2)‖w − w*‖² with step 1/(t+1): e_{t+1} = (1 − a/(t+1)) e_t ~ t^(−a)
        let a = 1.5;
        let w_star = [0.5, -1.5];
        let mut w = [3.0, 2.0];
        let mut history = Vec::new();
        for t in 1..=200 {
            let mut g = GatingState::new(1, 2, 1).unwrap();
            g.weights.row_mut(0).copy_from_slice(&w);
            history.push(g);
            let lr = 1.0 / (t as f64 + 1.0);
            for i in 0..2 {
                w[i] -= lr * a * (w[i] - w_star[i]);
            }
        }
        let gaps = convergence_gap(&history).unwrap();
        // fitted envelope constant from the early iterates
        let c = gaps.iter().enumerate().take(20).map(|(i, g)| g * (i + 1) as f64).fold(0.0, f64::max);
        for (i, g) in gaps.iter().enumerate() {
            assert!(*g <= c / (i + 1) as f64 + 1e-12, "t={} gap={g}", i + 1);
        }
    }

    #[test]
    fn active_parameter_counting() {
        let experts = pool(3, 2);
        let gating = GatingState::new(3, 3, 2).unwrap();
        let active = select_top_m(&[0.1, 0.6, 0.3], 2).unwrap();
        let n = active_parameter_count(&active, &experts, &gating).unwrap();
        assert_eq!(n, 2 * (3 + 1) + 2 * experts[0].param_count());
    }
}
