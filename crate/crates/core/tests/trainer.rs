//! Learner-level invariants: gating, expansion, freezing and the loss
//! decomposition.

use drae_core::dpmm::ExpansionDecision;
use drae_core::harness::{gen_stream, prototype_corpus, StreamConfig};
use drae_core::moe::{gate, maybe_expand, select_top_m, Expert, GatingState};
use drae_core::numerics::{Mat, Rng};
use drae_core::prag::{Corpus, Document};
use drae_core::trainer::{adapt_weights, compute_losses, DraeSystem, LossBreakdown, SystemConfig, TrainConfig};
use proptest::prelude::*;

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Scalar PID loop on `ẋ = u` from 0 to 1, mean squared error over 500 steps.
fn reference_episode_mse(kp: f64, ki: f64, kd: f64) -> f64 {
    let dt = 0.01;
    let (mut x, mut acc, mut prev, mut sse) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..500 {
        let e = 1.0 - x;
        acc += e * dt;
        x += (kp * e + ki * acc + kd * (e - prev) / dt) * dt;
        prev = e;
        sse += (1.0 - x).powi(2);
    }
    sse / 500.0
}

#[test]
fn dim_one_losses_by_hand() {
    let config = SystemConfig {
        input_dim: 1,
        num_classes: 2,
        hidden_dim: 1,
        initial_experts: 1,
        active_experts: 1,
        fusion_rank: 1,
        control: drae_core::trainer::ControlConfig { noise_var: 0.0, ..Default::default() },
        ..Default::default()
    };
    let corpus = Corpus::new(vec![Document { id: "a".into(), embedding: vec![1.0], payload: None }]).unwrap();
    let mut s = DraeSystem::new(config, TrainConfig::default(), corpus).unwrap();
    let e = &mut s.experts[0];
    e.w1 = Mat::from_vec(1, 1, vec![2.0]).unwrap();
    e.b1 = vec![-0.4];
    e.w2 = Mat::from_vec(2, 1, vec![1.0, -0.5]).unwrap();
    e.b2 = vec![0.1, 0.2];
    s.fusion.w0 = Mat::from_vec(1, 1, vec![1.0]).unwrap();
    s.fusion.bl = Mat::from_vec(1, 1, vec![0.5]).unwrap();
    s.fusion.al = Mat::from_vec(1, 1, vec![2.0]).unwrap();
    s.fusion.ud = Mat::from_vec(1, 1, vec![0.3]).unwrap();
    // flat ranker: every confidence is 1/2, so each ordered pair costs the full margin
    let r = &mut s.memory.ranker;
    r.w1.as_mut_slice().fill(0.0);
    r.b1.fill(0.0);
    r.w2.fill(0.0);
    r.b2 = 0.0;

    let got = compute_losses(&s, &[(vec![0.7], 1)]).unwrap();

    // expert on x = 0.7: hidden 1.0, logits [1.1, -0.3]
    let l_moe = (1.0 + 1.4f64.exp()).ln();
    // fused h = 0.7 + 0.5·2·0.7·σ(0.3 · 1)
    let h = 0.7 + 0.7 * sigmoid(0.3);
    let hid = (2.0 * h - 0.4).max(0.0);
    let l_prag = (1.0 + (1.5 * hid - 0.1).exp()).ln();
    // empty mixture: predictive N(0, 16 + 1)
    let l_dpmm = 0.5 * (2.0 * std::f64::consts::PI * 17.0).ln() + 0.49 / 34.0;
    let l_reflex = reference_episode_mse(1.0, 0.1, 0.01);
    let l_hyper = 0.1;
    let total = l_reflex + (l_moe + l_prag) + (l_hyper + l_dpmm);

    assert!((got.l_moe - l_moe).abs() < 1e-10, "{} vs {l_moe}", got.l_moe);
    assert!((got.l_prag - l_prag).abs() < 1e-10);
    assert!((got.l_dpmm - l_dpmm).abs() < 1e-10);
    assert!((got.l_reflex - l_reflex).abs() < 1e-10);
    assert_eq!(got.l_schema, 0.0);
    assert!((got.l_hyper - l_hyper).abs() < 1e-10);
    assert!((got.total - total).abs() < 1e-10);
}

#[test]
fn frozen_experts_never_move() {
    let stream = gen_stream(&StreamConfig { steps_per_task: 200, ..StreamConfig::reference(3) }).unwrap();
    let corpus = prototype_corpus(&stream, 4).unwrap();
    let mut s = DraeSystem::new(SystemConfig::default(), TrainConfig { seed: 3, ..Default::default() }, corpus).unwrap();
    let probe: Vec<Vec<f64>> = stream.holdout[0].iter().take(16).map(|(x, _)| x.clone()).collect();
    let mut snapshots: Vec<Option<(Expert, Vec<Vec<f64>>)>> = Vec::new();
    let mut last_k = s.k();
    for sample in &stream.samples {
        s.train_step(&sample.x, sample.y).unwrap();
        assert!(s.k() >= last_k);
        last_k = s.k();
        snapshots.resize(s.k(), None);
        for (k, e) in s.experts.iter().enumerate() {
            if e.frozen && snapshots[k].is_none() {
                let outs = probe.iter().map(|x| e.forward(x).unwrap()).collect();
                snapshots[k] = Some((e.clone(), outs));
            }
        }
    }
    let frozen: Vec<usize> = (0..s.k()).filter(|&k| snapshots[k].is_some()).collect();
    assert!(!frozen.is_empty(), "no expert froze on a multi-task stream");
    for k in frozen {
        let (before, outs) = snapshots[k].as_ref().unwrap();
        assert_eq!(&s.experts[k], before);
        for (x, o) in probe.iter().zip(outs) {
            assert_eq!(&s.experts[k].forward(x).unwrap(), o);
        }
    }
}

#[test]
fn loss_total_recomposes() {
    let b = LossBreakdown::new(0.3, 1.0, 0.7, 0.9, 0.05, 2.5, 1.7, 0.4);
    assert!((b.total - (0.3 + 1.0 + 1.7 * 1.6 + 0.4 * 2.55)).abs() < 1e-12);
    assert_eq!(b.total, b.recompose());
}

fn random_gating(k: usize, dim: usize, rng: &mut Rng) -> GatingState {
    let mut g = GatingState::new(k, dim, 1).unwrap();
    g.weights = Mat::random(k, dim, 3.0, rng);
    g.biases = rng.normal_vec(k, 1.0);
    g
}

proptest! {
    #[test]
    fn gates_form_a_distribution(seed in any::<u64>(), k in 1usize..12) {
        let mut rng = Rng::new(seed);
        let g = gate(&random_gating(k, 5, &mut rng), &rng.normal_vec(5, 4.0)).unwrap();
        prop_assert_eq!(g.len(), k);
        prop_assert!(g.iter().all(|p| *p >= 0.0));
        prop_assert!((g.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn top_m_keeps_the_largest(gates in prop::collection::vec(0.0f64..1.0, 1..15), m_frac in 0.0f64..1.0) {
        let m = 1 + ((gates.len() - 1) as f64 * m_frac) as usize;
        let a = select_top_m(&gates, m).unwrap();
        prop_assert_eq!(&a, &select_top_m(&gates, m).unwrap());
        prop_assert_eq!(a.expert_ids.len(), m);
        for (i, g) in gates.iter().enumerate() {
            if !a.expert_ids.contains(&i) {
                for &j in &a.expert_ids {
                    prop_assert!(gates[j] > *g || (gates[j] == *g && j < i));
                }
            }
        }
    }

    #[test]
    fn ties_prefer_lower_ids(k in 2usize..10, m_frac in 0.0f64..1.0) {
        let m = 1 + ((k - 1) as f64 * m_frac) as usize;
        let a = select_top_m(&vec![0.25; k], m).unwrap();
        prop_assert_eq!(a.expert_ids, (0..m).collect::<Vec<_>>());
    }

    #[test]
    fn expansion_leaves_existing_experts_alone(seed in any::<u64>(), k in 1usize..6) {
        let mut rng = Rng::new(seed);
        let mut experts: Vec<Expert> = (0..k).map(|i| Expert::new_random(i, 4, 3, 2, 1.0, &mut rng)).collect();
        let mut gating = random_gating(k, 4, &mut rng);
        let before = (experts.clone(), gating.clone());
        let gates = gate(&gating, &rng.normal_vec(4, 1.0)).unwrap();
        let spawn = ExpansionDecision { spawn: true, min_kl: f64::INFINITY, nearest_cluster: None };
        prop_assert!(maybe_expand(&spawn, &mut experts, &mut gating, &gates, &mut rng).unwrap());
        prop_assert_eq!(&experts[..k], &before.0[..]);
        prop_assert_eq!(gating.weights.row(k), &[0.0; 4][..]);
        for i in 0..k {
            prop_assert_eq!(gating.weights.row(i), before.1.weights.row(i));
        }
        let hold = ExpansionDecision { spawn: false, min_kl: 0.0, nearest_cluster: Some(0) };
        prop_assert!(!maybe_expand(&hold, &mut experts, &mut gating, &gates, &mut rng).unwrap());
        prop_assert_eq!(experts.len(), k + 1);
    }

    #[test]
    fn weights_stay_in_bounds(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let mut w = (1.0, 1.0);
        let random = |rng: &mut Rng| LossBreakdown::new(0.0, 0.0, rng.uniform() * 5.0, rng.uniform(), rng.uniform() * 3.0, rng.uniform() * 9.0, 1.0, 1.0);
        for _ in 0..10_000 {
            let (val, reference) = (random(&mut rng), random(&mut rng));
            w = adapt_weights(w, &val, &reference, 0.05, [0.1, 10.0]).unwrap();
            prop_assert!((0.1..=10.0).contains(&w.0) && (0.1..=10.0).contains(&w.1));
        }
    }
}
