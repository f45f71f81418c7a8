use serde::{Deserialize, Serialize};

use super::{adapt_weights, sgd_step, ControlConfig, LossBreakdown, SystemConfig, TrainConfig};
use crate::dpmm::{assign, expansion_check, predictive_loglik, DpmmState};
use crate::error::{shape_err, DraeError, Result};
use crate::moe::{concat, maybe_expand, select_top_m, ActiveSet, Expert, ExpertGrad, ExpertTrace, GatingState};
use crate::numerics::{softmax_unchecked, Mat, Rng};
use crate::prag::{encode_query, knowledge_stability, retrieve, Corpus, FusionGrad, FusionParams, FusionTrace, RetrievalResult};
use crate::rsho::{
    adapt_gains, memory_update, plan, rank_candidates, ranking_loss, Env, HyperMemory, IntegratorPlant, PidController,
    PlanOutcome, RuleSet,
};

/// Probability floor inside the cross-entropy.
const P_FLOOR: f64 = 1e-300;
/// Gain multipliers of the candidate policies held in the memory rows.
const CANDIDATE_SCALES: [f64; 3] = [0.5, 1.0, 2.0];

mod streams {
    pub const INIT: u64 = 0;
    pub const DPMM: u64 = 1;
    pub const EXPAND: u64 = 2;
    pub const PLAN: u64 = 3;
    pub const PID: u64 = 4;
    pub const REFLEX_EVAL: u64 = 5;
}

/// Forward quantities for one input, shared by prediction and training.
#[derive(Debug, Clone)]
pub struct SampleEval {
    pub retrieval: RetrievalResult,
    pub gates: Vec<f64>,
    pub active: ActiveSet,
    /// Active gates renormalised to sum to one, aligned with `active.expert_ids`.
    pub mix: Vec<f64>,
    pub hidden: Vec<f64>,
    /// Mixture prediction on the raw input.
    pub p_moe: Vec<f64>,
    /// Mixture prediction on the fused hidden state.
    pub p_prag: Vec<f64>,
    u: Vec<f64>,
    x_traces: Vec<ExpertTrace>,
    h_traces: Vec<ExpertTrace>,
    fusion: FusionTrace,
}

impl SampleEval {
    pub fn cross_entropies(&self, y: usize) -> (f64, f64) {
        (-self.p_moe[y].max(P_FLOOR).ln(), -self.p_prag[y].max(P_FLOOR).ln())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemGrad {
    pub gating_w: Mat,
    pub gating_b: Vec<f64>,
    pub experts: Vec<ExpertGrad>,
    pub fusion: FusionGrad,
}

impl SystemGrad {
    /// Same layout as [`DraeSystem::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend_from_slice(self.gating_w.as_slice());
        v.extend_from_slice(&self.gating_b);
        for e in &self.experts {
            for part in e.parts() {
                v.extend_from_slice(part);
            }
        }
        for part in self.fusion.parts() {
            v.extend_from_slice(part);
        }
        v
    }

    fn scale(&mut self, s: f64) {
        self.gating_w.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        self.gating_b.iter_mut().for_each(|v| *v *= s);
        for e in &mut self.experts {
            e.scale(s);
        }
        for m in [&mut self.fusion.w0, &mut self.fusion.bl, &mut self.fusion.al, &mut self.fusion.ud] {
            m.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub breakdown: LossBreakdown,
    pub spawned: bool,
    pub cluster: usize,
    /// Prediction on the raw input before the update.
    pub prediction: Vec<f64>,
    pub correct: bool,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub l_reflex: f64,
    pub l_schema: f64,
    pub l_moe: f64,
    pub l_prag: f64,
    pub l_hyper: f64,
    pub l_dpmm: f64,
    pub total: f64,
    pub alpha: f64,
    pub gamma: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub cluster_count: usize,
    pub seed: u64,
}

/// Full online learner.
///
/// Each step seats the task embedding in the DPMM (the raw input is used as
/// the embedding), grows an expert on an expansion signal, refreshes freeze
/// flags, and takes one SGD step on the weighted objective. An expert is
/// updated only while its owning cluster's root is the current one and it is
/// not frozen.
#[derive(Debug, Clone)]
pub struct DraeSystem {
    pub config: SystemConfig,
    pub train: TrainConfig,
    pub gating: GatingState,
    pub experts: Vec<Expert>,
    pub encoder: Mat,
    pub corpus: Corpus,
    pub fusion: FusionParams,
    pub dpmm: DpmmState,
    /// Root cluster of every cluster; a cluster opened without a spawn joins
    /// the root of its nearest cluster.
    pub cluster_root: Vec<usize>,
    /// Last step at which each root was seen; indexed by cluster id.
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
    pub(super) prev_hidden: Option<Vec<f64>>,
    pub(super) prev_selection: Vec<String>,
    pub(super) stability_sum: f64,
    pub(super) stability_count: usize,
    pub(super) window: Vec<LossBreakdown>,
    pub(super) reference: Option<LossBreakdown>,
    pub(super) dpmm_rng: Rng,
    pub(super) expand_rng: Rng,
    pub(super) plan_rng: Rng,
    pub(super) pid_rng: Rng,
}

impl DraeSystem {
    pub fn new(config: SystemConfig, train: TrainConfig, corpus: Corpus) -> Result<Self> {
        config.validate()?;
        train.validate()?;
        let seed = train.seed;
        let mut init = Rng::stream(seed, streams::INIT);
        let n = config.input_dim;
        let dim_e = corpus.dim();
        let experts = (0..config.initial_experts)
            .map(|i| Expert::new_random(i, n, config.hidden_dim, config.num_classes, config.init_scale, &mut init))
            .collect();
        let gating = GatingState::new(config.initial_experts, n + dim_e, config.active_experts)?;
        let encoder = if dim_e == n { Mat::identity(n) } else { Mat::random(dim_e, n, 1.0 / (n as f64).sqrt(), &mut init) };
        let fusion = FusionParams::init(n, dim_e, config.fusion_rank, &mut init)?;
        let d = &config.dpmm;
        let dpmm = DpmmState::isotropic(n, d.alpha, d.base_var, d.obs_var, d.tau)?;
        let rules = RuleSet::fetch_cup();
        let skills = rules.skill_matrix.first().map_or(1, Vec::len);
        let memory = HyperMemory::init(skills, n, config.control.memory_decay, &mut init)?;
        let c = &config.control;
        let mut pid = PidController::new(c.kp, c.ki, c.kd, 1)?;
        pid.noise_cov_diag = vec![c.noise_var];
        let plant = IntegratorPlant::default();
        let candidate_gains: Vec<[f64; 3]> =
            (0..skills).map(|j| pid.gains().map(|g| g * CANDIDATE_SCALES[j % CANDIDATE_SCALES.len()])).collect();
        let mut sys = Self {
            alpha: train.alpha0,
            gamma: train.gamma0,
            dpmm_rng: Rng::stream(seed, streams::DPMM),
            expand_rng: Rng::stream(seed, streams::EXPAND),
            plan_rng: Rng::stream(seed, streams::PLAN),
            pid_rng: Rng::stream(seed, streams::PID),
            config,
            train,
            gating,
            experts,
            encoder,
            corpus,
            fusion,
            dpmm,
            cluster_root: Vec::new(),
            root_last_active: Vec::new(),
            pid,
            plant,
            rules,
            probe_initial: vec![0, 1],
            memory,
            candidate_gains,
            candidate_returns: Vec::new(),
            step: 0,
            l_reflex: 0.0,
            l_schema: 0.0,
            prev_hidden: None,
            prev_selection: Vec::new(),
            stability_sum: 0.0,
            stability_count: 0,
            window: Vec::new(),
            reference: None,
        };
        sys.candidate_returns = sys.candidate_gains.iter().map(|g| -sys.reflex_cost_of(&sys.pid.with_gains(*g))).collect();
        sys.l_reflex = sys.reflex_cost();
        Ok(sys)
    }

    pub fn k(&self) -> usize {
        self.experts.len()
    }

    pub fn cluster_count(&self) -> usize {
        self.dpmm.clusters.len()
    }

    /// Mean knowledge stability over consecutive training steps so far.
    pub fn stability_mean(&self) -> f64 {
        if self.stability_count == 0 {
            0.0
        } else {
            self.stability_sum / self.stability_count as f64
        }
    }


    fn reflex_cost_of(&self, ctrl: &PidController) -> f64 {
        self.plant.cost(ctrl, &mut Rng::stream(self.train.seed, streams::REFLEX_EVAL))
    }

    /// Mean squared tracking error of the current PID on the reference episode.
    pub fn reflex_cost(&self) -> f64 {
        self.reflex_cost_of(&self.pid)
    }

    /// Fraction of failed planner probes, with a seed-fixed search.
    pub fn schema_failure_rate(&self, rng: &mut Rng) -> Result<f64> {
        let out = plan(&self.rules, &self.probe_initial, self.config.control.plan_budget, rng)?;
        Ok(match out {
            PlanOutcome::Found(_) => 0.0,
            PlanOutcome::Failed { .. } => 1.0,
        })
    }

    /// Task root of the most probable existing cluster for `x`.
    pub fn map_root(&self, x: &[f64]) -> Result<Option<usize>> {
        Ok(self.dpmm.map_cluster(x)?.map(|c| self.cluster_root[c]))
    }

    /// Experts eligible for routing under `root`: those it owns plus unowned
    /// ones. Everything is eligible without task routing, without a root, or
    /// when the root owns nothing.
    pub fn routing_pool(&self, root: Option<usize>) -> Vec<usize> {
        let all = || (0..self.experts.len()).collect();
        let Some(r) = root.filter(|_| self.config.task_routing) else { return all() };
        let pool: Vec<usize> = (0..self.experts.len())
            .filter(|&k| self.experts[k].owning_cluster.is_none_or(|c| self.cluster_root[c] == r))
            .collect();
        if pool.is_empty() {
            all()
        } else {
            pool
        }
    }

    /// Forward pass for one input, routed by its most probable task root.
    pub fn evaluate(&self, x: &[f64]) -> Result<SampleEval> {
        if x.len() != self.config.input_dim {
            return Err(shape_err("input", self.config.input_dim, x.len()));
        }
        self.evaluate_routed(x, self.map_root(x)?)
    }

    /// Forward pass with the routing pool of `root`.
    ///
    /// Top-m selection runs over the pool only, keeping at most `m` experts.
    pub fn evaluate_routed(&self, x: &[f64], root: Option<usize>) -> Result<SampleEval> {
        if x.len() != self.config.input_dim {
            return Err(shape_err("input", self.config.input_dim, x.len()));
        }
        let q = encode_query(&self.encoder, x)?;
        let retrieval = retrieve(&self.corpus, &q, self.config.retrieval_lambda)?;
        let u = concat(x, &retrieval.aggregated);
        let logits = self.gating.logits(&u)?;
        let gates = softmax_unchecked(&logits);
        let pool = self.routing_pool(root);
        let sub: Vec<f64> = pool.iter().map(|&k| gates[k]).collect();
        let picked = select_top_m(&sub, self.gating.m.min(sub.len()))?;
        let active = ActiveSet {
            expert_ids: picked.expert_ids.iter().map(|&i| pool[i]).collect(),
            gate_values: picked.gate_values,
            threshold: picked.threshold,
        };
        // renormalised gates, taken from the active logits alone so inactive
        // rows cannot leak rounding into the mixture
        let mix = softmax_unchecked(&active.expert_ids.iter().map(|&k| logits[k]).collect::<Vec<_>>());
        let fusion = self.fusion.trace(x, &retrieval.aggregated);
        let mut x_traces = Vec::with_capacity(mix.len());
        let mut h_traces = Vec::with_capacity(mix.len());
        for &id in &active.expert_ids {
            let e = self.experts.get(id).ok_or(DraeError::MissingExpert(id))?;
            x_traces.push(e.trace(x));
            h_traces.push(e.trace(&fusion.out));
        }
        let p_moe = mixture(&mix, &x_traces);
        let p_prag = mixture(&mix, &h_traces);
        Ok(SampleEval {
            retrieval,
            gates,
            active,
            mix,
            hidden: fusion.out.clone(),
            p_moe,
            p_prag,
            u,
            x_traces,
            h_traces,
            fusion,
        })
    }

    /// Class probabilities for `x`; no state is touched.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.evaluate(x)?.p_moe)
    }

    fn trainable(&self, k: usize, root: Option<usize>) -> bool {
        let e = &self.experts[k];
        if e.frozen {
            return false;
        }
        match (e.owning_cluster, root) {
            (Some(c), Some(r)) => self.cluster_root[c] == r,
            _ => true,
        }
    }

    pub fn zero_grad(&self) -> SystemGrad {
        SystemGrad {
            gating_w: Mat::zeros(self.gating.k(), self.gating.input_dim()),
            gating_b: vec![0.0; self.gating.k()],
            experts: self.experts.iter().map(Expert::zero_grad).collect(),
            fusion: self.fusion.zero_grad(),
        }
    }

    /// Accumulates `w_moe·∂l_moe + w_prag·∂l_prag` for one labelled input.
    ///
    /// Experts not trainable under `root` receive nothing; `None` trains all.
    pub fn accumulate_grad(
        &self,
        eval: &SampleEval,
        x: &[f64],
        y: usize,
        weights: (f64, f64),
        root: Option<usize>,
        grad: &mut SystemGrad,
    ) -> Result<()> {
        if y >= self.config.num_classes {
            return Err(DraeError::InvalidInput(format!("label {y} outside 0..{}", self.config.num_classes)));
        }
        let mut scratch: Vec<Option<ExpertGrad>> = vec![None; self.experts.len()];
        let ids = &eval.active.expert_ids;
        let mut d_logit = vec![0.0; ids.len()];
        let mut dh = vec![0.0; self.fusion.hidden_dim()];
        for (path, (traces, p, w)) in
            [(&eval.x_traces, &eval.p_moe, weights.0), (&eval.h_traces, &eval.p_prag, weights.1)].into_iter().enumerate()
        {
            if w == 0.0 {
                continue;
            }
            let v: &[f64] = if path == 0 { x } else { &eval.hidden };
            let py = p[y].max(P_FLOOR);
            for (slot, &id) in ids.iter().enumerate() {
                let f = &traces[slot].out;
                let rho = eval.mix[slot] * f[y] / py;
                d_logit[slot] += w * (eval.mix[slot] - rho);
                let mut d_out: Vec<f64> = f.iter().map(|fi| w * rho * fi).collect();
                d_out[y] -= w * rho;
                let target = if self.trainable(id, root) {
                    &mut grad.experts[id]
                } else {
                    scratch[id].get_or_insert_with(|| self.experts[id].zero_grad())
                };
                let dv = self.experts[id].backward(v, &traces[slot], &d_out, target);
                if path == 1 {
                    for (a, b) in dh.iter_mut().zip(&dv) {
                        *a += b;
                    }
                }
            }
        }
        for (slot, &id) in ids.iter().enumerate() {
            if d_logit[slot] != 0.0 {
                for (g, ui) in grad.gating_w.row_mut(id).iter_mut().zip(&eval.u) {
                    *g += d_logit[slot] * ui;
                }
                grad.gating_b[id] += d_logit[slot];
            }
        }
        if weights.1 != 0.0 {
            self.fusion.backward(x, &eval.retrieval.aggregated, &eval.fusion, &dh, &mut grad.fusion);
        }
        Ok(())
    }

    /// Gating, expert and fusion parameters in a fixed order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend_from_slice(self.gating.weights.as_slice());
        v.extend_from_slice(&self.gating.biases);
        for e in &self.experts {
            v.extend(e.flat_params());
        }
        for m in [&self.fusion.w0, &self.fusion.bl, &self.fusion.al, &self.fusion.ud] {
            v.extend_from_slice(m.as_slice());
        }
        v
    }

    pub fn set_flat_params(&mut self, p: &[f64]) -> Result<()> {
        let expected = self.flat_params().len();
        if p.len() != expected {
            return Err(shape_err("flat parameters", expected, p.len()));
        }
        let mut off = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&p[off..off + dst.len()]);
            off += dst.len();
        };
        take(self.gating.weights.as_mut_slice());
        take(&mut self.gating.biases);
        for e in &mut self.experts {
            for part in e.params_mut() {
                take(part);
            }
        }
        for m in [&mut self.fusion.w0, &mut self.fusion.bl, &mut self.fusion.al, &mut self.fusion.ud] {
            take(m.as_mut_slice());
        }
        Ok(())
    }

    /// Seats `x` in the DPMM, grows and freezes experts; returns
    /// `(cluster, root, spawned, l_dpmm)`.
    fn structural_update(&mut self, x: &[f64]) -> Result<(usize, usize, bool, f64)> {
        let t = self.step;
        let l_dpmm = -predictive_loglik(&self.dpmm, x)?;
        let decision = expansion_check(&self.dpmm, x)?;
        let before = self.dpmm.clusters.len();
        let cid = assign(&mut self.dpmm, x, &mut self.dpmm_rng)?;
        let opened = cid == before;
        let mut spawned = false;
        if self.config.expansion && decision.spawn {
            let gates = softmax_unchecked(&self.gating.logits(&self.gating_input(x)?)?);
            spawned = maybe_expand(&decision, &mut self.experts, &mut self.gating, &gates, &mut self.expand_rng)?;
        }
        if opened {
            let root = match decision.nearest_cluster {
                Some(near) if !spawned => self.cluster_root[near],
                _ => cid,
            };
            self.cluster_root.push(root);
            self.root_last_active.push(t);
        }
        let root = self.cluster_root[cid];
        self.root_last_active[root] = t;
        for e in &mut self.experts {
            if e.owning_cluster.is_none() {
                e.owning_cluster = Some(if spawned && e.id + 1 == self.gating.k() { cid } else { root });
            }
        }
        if self.config.freeze {
            for e in &mut self.experts {
                if let Some(c) = e.owning_cluster {
                    let r = self.cluster_root[c];
                    e.frozen = t - self.root_last_active[r] > self.config.freeze_window;
                }
            }
        }
        Ok((cid, root, spawned, l_dpmm))
    }

    fn gating_input(&self, x: &[f64]) -> Result<Vec<f64>> {
        let q = encode_query(&self.encoder, x)?;
        let r = retrieve(&self.corpus, &q, self.config.retrieval_lambda)?;
        Ok(concat(x, &r.aggregated))
    }

    fn control_update(&mut self) -> Result<()> {
        let c: &ControlConfig = &self.config.control;
        let t = self.step;
        if c.adapt_every > 0 && t > 0 && t % c.adapt_every == 0 {
            self.pid = adapt_gains(&self.pid, 1, &self.plant, &mut self.pid_rng);
            self.l_reflex = self.reflex_cost();
        }
        let probe = if c.schema_every == 0 { t == 0 } else { t % c.schema_every == 0 };
        if probe {
            let mut rng = self.plan_rng.clone();
            self.l_schema = self.schema_failure_rate(&mut rng)?;
            self.plan_rng.next_u64();
        }
        Ok(())
    }

    /// One online step on a single labelled input.
    pub fn train_step(&mut self, x: &[f64], y: usize) -> Result<StepReport> {
        let mut reports = self.train_batch(&[(x.to_vec(), y)])?;
        Ok(reports.remove(0))
    }

    /// Structural updates for every sample in order, then one averaged SGD step.
    pub fn train_batch(&mut self, batch: &[(Vec<f64>, usize)]) -> Result<Vec<StepReport>> {
        if batch.is_empty() {
            return Err(DraeError::EmptyBatch);
        }
        let mut seats = Vec::with_capacity(batch.len());
        for (x, y) in batch {
            if *y >= self.config.num_classes {
                return Err(DraeError::InvalidInput(format!("label {y} outside 0..{}", self.config.num_classes)));
            }
            self.control_update()?;
            seats.push(self.structural_update(x)?);
            self.step += 1;
        }
        let mut grad = self.zero_grad();
        let mut reports = Vec::with_capacity(batch.len());
        let mut ranker_grad = self.memory.ranker.zero_grad();
        for ((x, y), (cid, root, spawned, l_dpmm)) in batch.iter().zip(seats) {
            let eval = self.evaluate_routed(x, Some(root))?;
            let (l_moe, l_prag) = eval.cross_entropies(*y);
            if !self.train.control_only {
                self.accumulate_grad(&eval, x, *y, (self.alpha, self.alpha), Some(root), &mut grad)?;
            }
            memory_update(&mut self.memory, &eval.hidden)?;
            let (lh, rg) = ranking_loss(&self.memory, &self.candidate_returns)?;
            ranker_grad = rg;
            if let Some(prev) = &self.prev_hidden {
                if let Ok(s) = knowledge_stability(prev, &eval.hidden, &self.prev_selection, &eval.retrieval.selected) {
                    self.stability_sum += s;
                    self.stability_count += 1;
                }
            }
            self.prev_hidden = Some(eval.hidden.clone());
            self.prev_selection = eval.retrieval.selected.clone();
            let breakdown =
                LossBreakdown::new(self.l_reflex, self.l_schema, l_moe, l_prag, lh, l_dpmm, self.alpha, self.gamma);
            let correct = crate::rsho::argmax(&eval.p_moe) == *y;
            reports.push(StepReport { breakdown, spawned, cluster: cid, prediction: eval.p_moe, correct });
        }
        if !self.train.control_only {
            grad.scale(1.0 / batch.len() as f64);
            self.apply(&grad)?;
            if self.gamma > 0.0 {
                let lr = self.train.lr * self.gamma;
                let parts = ranker_grad.parts();
                for (p, g) in self.memory.ranker.params_mut().into_iter().zip(parts) {
                    sgd_step(p, g, lr)?;
                }
            }
        }
        self.window.extend(reports.iter().map(|r| r.breakdown));
        self.maybe_adapt_weights()?;
        Ok(reports)
    }

    fn maybe_adapt_weights(&mut self) -> Result<()> {
        let every = self.train.adapt_every;
        if every == 0 || self.window.len() < every {
            return Ok(());
        }
        let Some(val) = LossBreakdown::mean(&self.window) else { return Ok(()) };
        self.window.clear();
        if let Some(reference) = self.reference {
            let (a, g) = adapt_weights(
                (self.alpha, self.gamma),
                &val,
                &reference,
                self.train.weight_step,
                self.train.weight_bounds,
            )?;
            self.alpha = a;
            self.gamma = g;
        }
        self.reference = Some(val);
        Ok(())
    }

    /// Plain SGD on gating, trainable experts and the fusion adapters; the
    /// fusion base projection stays fixed and frozen experts are skipped.
    pub fn apply(&mut self, grad: &SystemGrad) -> Result<()> {
        let lr = self.train.lr;
        sgd_step(self.gating.weights.as_mut_slice(), grad.gating_w.as_slice(), lr)?;
        sgd_step(&mut self.gating.biases, &grad.gating_b, lr)?;
        for (e, g) in self.experts.iter_mut().zip(&grad.experts) {
            if e.frozen {
                continue;
            }
            for (p, gp) in e.params_mut().into_iter().zip(g.parts()) {
                sgd_step(p, gp, lr)?;
            }
        }
        sgd_step(self.fusion.bl.as_mut_slice(), grad.fusion.bl.as_slice(), lr)?;
        sgd_step(self.fusion.al.as_mut_slice(), grad.fusion.al.as_slice(), lr)?;
        sgd_step(self.fusion.ud.as_mut_slice(), grad.fusion.ud.as_slice(), lr)?;
        Ok(())
    }

    /// Index and confidences of the most confident candidate policy.
    pub fn best_candidate(&self) -> (Vec<f64>, usize) {
        rank_candidates(&self.memory)
    }

    pub fn record(&self, report: &StepReport) -> TrainRecord {
        let b = &report.breakdown;
        TrainRecord {
            step: self.step,
            l_reflex: b.l_reflex,
            l_schema: b.l_schema,
            l_moe: b.l_moe,
            l_prag: b.l_prag,
            l_hyper: b.l_hyper,
            l_dpmm: b.l_dpmm,
            total: b.total,
            alpha: b.alpha_t,
            gamma: b.gamma_t,
            k: self.k(),
            cluster_count: self.cluster_count(),
            seed: self.train.seed,
        }
    }
}

fn mixture(mix: &[f64], traces: &[ExpertTrace]) -> Vec<f64> {
    let mut p = vec![0.0; traces[0].out.len()];
    for (w, tr) in mix.iter().zip(traces) {
        for (a, b) in p.iter_mut().zip(&tr.out) {
            *a += w * b;
        }
    }
    p
}

/// Loss components on a labelled batch without touching the system.
///
/// The planner term uses a search seeded from the training seed.
pub fn compute_losses(system: &DraeSystem, batch: &[(Vec<f64>, usize)]) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(DraeError::EmptyBatch);
    }
    let n = batch.len() as f64;
    let (mut l_moe, mut l_prag, mut l_dpmm) = (0.0, 0.0, 0.0);
    for (x, y) in batch {
        if *y >= system.config.num_classes {
            return Err(DraeError::InvalidInput(format!("label {y} outside 0..{}", system.config.num_classes)));
        }
        let eval = system.evaluate(x)?;
        let (a, b) = eval.cross_entropies(*y);
        l_moe += a / n;
        l_prag += b / n;
        l_dpmm -= predictive_loglik(&system.dpmm, x)? / n;
    }
    let l_reflex = system.reflex_cost();
    let l_schema = system.schema_failure_rate(&mut Rng::stream(system.train.seed, streams::PLAN))?;
    let (l_hyper, _) = ranking_loss(&system.memory, &system.candidate_returns)?;
    Ok(LossBreakdown::new(l_reflex, l_schema, l_moe, l_prag, l_hyper, l_dpmm, system.alpha, system.gamma))
}
