use serde::{Deserialize, Serialize};

use crate::error::{DraeError, Result};
use crate::numerics::{norm, softmax_unchecked, Rng};
use crate::prag::{Corpus, Document};

/// Generator settings for a synthetic classification stream.
///
/// Task centres sit on a regular simplex of radius `task_radius` in the first
/// `tasks` coordinates. Class means are offset from the centre along a
/// second simplex in the next `classes` coordinates, with the offset sign
/// alternating between consecutive tasks so that one shared decision rule
/// cannot serve neighbouring tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamConfig {
    pub dim: usize,
    pub classes: usize,
    pub tasks: usize,
    pub steps_per_task: usize,
    pub task_radius: f64,
    pub class_offset: f64,
    pub noise_sd: f64,
    /// Per-step displacement of every drifting mean coordinate.
    pub drift: f64,
    /// Coordinates that drift; 0 means all of them.
    pub drift_dims: usize,
    /// Held-out points per task.
    pub holdout: usize,
    pub seed: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self::reference(0)
    }
}

impl StreamConfig {
    /// Five sequential tasks with conflicting class layouts, no drift.
    pub fn reference(seed: u64) -> Self {
        Self {
            dim: 16,
            classes: 2,
            tasks: 5,
            steps_per_task: 400,
            task_radius: 8.0,
            class_offset: 1.5,
            noise_sd: 1.0,
            drift: 0.0,
            drift_dims: 0,
            holdout: 200,
            seed,
        }
    }

    /// One task whose class means translate at a constant rate.
    pub fn drifting(seed: u64, steps: usize, drift: f64) -> Self {
        Self {
            tasks: 1,
            classes: 3,
            steps_per_task: steps,
            task_radius: 0.0,
            class_offset: 2.0,
            drift,
            drift_dims: 0,
            holdout: 0,
            ..Self::reference(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DraeError::Config(m));
        if self.classes < 2 || self.tasks == 0 || self.steps_per_task == 0 {
            return bad("stream needs ≥ 2 classes, ≥ 1 task and positive durations".into());
        }
        let used = if self.tasks > 1 { self.tasks } else { 0 } + self.classes;
        if self.dim < used {
            return bad(format!("dim {} cannot hold {} task and {} class directions", self.dim, self.tasks, self.classes));
        }
        if !(self.noise_sd > 0.0) || !(self.drift >= 0.0) || !(self.task_radius >= 0.0) || !(self.class_offset >= 0.0) {
            return bad("noise_sd must be positive; drift, radius and offset non-negative".into());
        }
        if self.drift_dims > self.dim {
            return bad(format!("drift_dims {} exceeds dim {}", self.drift_dims, self.dim));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.tasks * self.steps_per_task
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: usize,
    pub task: usize,
}

/// Gaussian classification problem with isotropic noise and equal priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// One mean per class.
    pub means: Vec<Vec<f64>>,
    pub noise_sd: f64,
}

impl TaskSpec {
    /// Class posterior of the Bayes classifier with `shift` added to every mean.
    pub fn posterior(&self, x: &[f64], shift: &[f64]) -> Vec<f64> {
        let var = self.noise_sd * self.noise_sd;
        let logits: Vec<f64> = self
            .means
            .iter()
            .map(|m| {
                let d2: f64 = x.iter().zip(m).zip(shift).map(|((xi, mi), si)| (xi - mi - si).powi(2)).sum();
                -0.5 * d2 / var
            })
            .collect();
        softmax_unchecked(&logits)
    }
}

/// Pre-drawn stream with its generating parameters.
///
/// The class means at step `t` are the task's base means plus `t·drift`
/// times a fixed ±1 direction on the drifting coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStream {
    pub config: StreamConfig,
    pub tasks: Vec<TaskSpec>,
    /// `(task id, duration)` in order.
    pub schedule: Vec<(usize, usize)>,
    pub drift_direction: Vec<f64>,
    pub samples: Vec<Sample>,
    /// Held-out points for each task, drawn at the undrifted means.
    pub holdout: Vec<Vec<(Vec<f64>, usize)>>,
}

fn simplex(n: usize, offset: usize, dim: usize, radius: f64) -> Vec<Vec<f64>> {
    if n == 1 {
        return vec![vec![0.0; dim]];
    }
    let scale = radius / ((n - 1) as f64 / n as f64).sqrt();
    (0..n)
        .map(|i| {
            let mut v = vec![0.0; dim];
            for j in 0..n {
                v[offset + j] = scale * (f64::from(u8::from(i == j)) - 1.0 / n as f64);
            }
            v
        })
        .collect()
}

pub fn gen_stream(config: &StreamConfig) -> Result<TaskStream> {
    config.validate()?;
    let c = config;
    let centres = simplex(c.tasks, 0, c.dim, c.task_radius);
    let class_base = if c.tasks > 1 { c.tasks } else { 0 };
    let offsets = simplex(c.classes, class_base, c.dim, c.class_offset);
    let tasks: Vec<TaskSpec> = centres
        .iter()
        .enumerate()
        .map(|(i, centre)| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            let means = offsets.iter().map(|o| centre.iter().zip(o).map(|(a, b)| a + sign * b).collect()).collect();
            TaskSpec { means, noise_sd: c.noise_sd }
        })
        .collect();
    let mut rng = Rng::stream(c.seed, 0);
    let k = if c.drift_dims == 0 { c.dim } else { c.drift_dims };
    let drift_direction: Vec<f64> =
        (0..c.dim).map(|j| if j < k { if rng.below(2) == 0 { 1.0 } else { -1.0 } } else { 0.0 }).collect();
    let schedule: Vec<(usize, usize)> = (0..c.tasks).map(|i| (i, c.steps_per_task)).collect();
    let mut samples = Vec::with_capacity(c.total_steps());
    let mut t = 0usize;
    for &(task, steps) in &schedule {
        for _ in 0..steps {
            let y = rng.below(c.classes);
            let shift = t as f64 * c.drift;
            let x = tasks[task].means[y]
                .iter()
                .zip(&drift_direction)
                .map(|(m, d)| m + shift * d + c.noise_sd * rng.normal())
                .collect();
            samples.push(Sample { x, y, task });
            t += 1;
        }
    }
    let mut hold = Rng::stream(c.seed, 1);
    let holdout = tasks
        .iter()
        .map(|spec| {
            (0..c.holdout)
                .map(|_| {
                    let y = hold.below(c.classes);
                    (spec.means[y].iter().map(|m| m + c.noise_sd * hold.normal()).collect(), y)
                })
                .collect()
        })
        .collect();
    Ok(TaskStream { config: config.clone(), tasks, schedule, drift_direction, samples, holdout })
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn shift_at(&self, t: usize) -> Vec<f64> {
        let s = t as f64 * self.config.drift;
        self.drift_direction.iter().map(|d| s * d).collect()
    }

    /// Class means in force at step `t`.
    pub fn means_at(&self, t: usize) -> Vec<Vec<f64>> {
        let shift = self.shift_at(t);
        self.tasks[self.samples[t].task].means.iter().map(|m| m.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect()
    }

    /// Bayes-optimal class posterior for input `x` at step `t`.
    pub fn bayes_posterior(&self, t: usize, x: &[f64]) -> Vec<f64> {
        self.tasks[self.samples[t].task].posterior(x, &self.shift_at(t))
    }

    /// `Σ_t ‖θ*_{t+1} − θ*_t‖` over every step, with θ* the stacked class
    /// means; the final transition uses the drift alone.
    pub fn path_length(&self) -> f64 {
        let mut total = 0.0;
        for t in 0..self.len() {
            let cur = self.means_at(t);
            let next: Vec<Vec<f64>> = if t + 1 < self.len() {
                self.means_at(t + 1)
            } else {
                let d = self.shift_at(1);
                cur.iter().map(|m| m.iter().zip(&d).map(|(a, b)| a + b).collect()).collect()
            };
            let diff: Vec<f64> = cur.iter().zip(&next).flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| q - p)).collect();
            total += norm(&diff);
        }
        total
    }
}

/// Retrieval corpus of unit-norm class-mean prototypes for every task plus
/// `noise_docs` random unit directions.
pub fn prototype_corpus(stream: &TaskStream, noise_docs: usize) -> Result<Corpus> {
    let mut docs = Vec::new();
    for (i, task) in stream.tasks.iter().enumerate() {
        for (c, mean) in task.means.iter().enumerate() {
            let n = norm(mean);
            if n > 0.0 {
                let embedding = mean.iter().map(|v| v / n).collect();
                docs.push(Document { id: format!("task{i}-class{c}"), embedding, payload: None });
            }
        }
    }
    let mut rng = Rng::stream(stream.config.seed, 2);
    for j in 0..noise_docs {
        let v = rng.normal_vec(stream.config.dim, 1.0);
        let n = norm(&v);
        docs.push(Document { id: format!("noise{j}"), embedding: v.iter().map(|x| x / n).collect(), payload: None });
    }
    Corpus::new(docs)
}
