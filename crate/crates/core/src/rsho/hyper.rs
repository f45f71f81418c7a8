use serde::{Deserialize, Serialize};

use crate::error::{shape_err, DraeError, Result};
use crate::numerics::{circ_conv_unchecked, dot, sigmoid, Mat, Rng};

pub const RANKER_HIDDEN: usize = 16;
pub const RANK_MARGIN: f64 = 0.1;

/// One-hidden-layer tanh scorer; confidence is the sigmoid of its output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ranker {
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankerGrad {
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl Ranker {
    pub fn new_random(dim: usize, rng: &mut Rng) -> Self {
        Self {
            w1: Mat::random(RANKER_HIDDEN, dim, 1.0 / (dim as f64).sqrt(), rng),
            b1: vec![0.0; RANKER_HIDDEN],
            w2: rng.normal_vec(RANKER_HIDDEN, 1.0 / (RANKER_HIDDEN as f64).sqrt()),
            b2: 0.0,
        }
    }

    fn hidden(&self, row: &[f64]) -> Vec<f64> {
        let mut h = self.w1.mv(row);
        for (v, b) in h.iter_mut().zip(&self.b1) {
            *v = (*v + b).tanh();
        }
        h
    }

    /// Pre-sigmoid score.
    pub fn score(&self, row: &[f64]) -> f64 {
        dot(&self.w2, &self.hidden(row)) + self.b2
    }

    pub fn zero_grad(&self) -> RankerGrad {
        RankerGrad {
            w1: Mat::zeros(self.w1.rows(), self.w1.cols()),
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: 0.0,
        }
    }

    fn backward(&self, row: &[f64], d_score: f64, grad: &mut RankerGrad) {
        let h = self.hidden(row);
        for (g, hv) in grad.w2.iter_mut().zip(&h) {
            *g += d_score * hv;
        }
        grad.b2 += d_score;
        let d_pre: Vec<f64> = (0..h.len()).map(|k| d_score * self.w2[k] * (1.0 - h[k] * h[k])).collect();
        grad.w1.add_outer(1.0, &d_pre, row);
        for (g, d) in grad.b1.iter_mut().zip(&d_pre) {
            *g += d;
        }
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 4] {
        [self.w1.as_mut_slice(), &mut self.b1, &mut self.w2, std::slice::from_mut(&mut self.b2)]
    }
}

impl RankerGrad {
    pub fn parts(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), &self.b1, &self.w2, std::slice::from_ref(&self.b2)]
    }
}

/// N candidate rows evolved by shared circular kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperMemory {
    pub h: Mat,
    pub wm: Vec<f64>,
    pub wz: Vec<f64>,
    pub ranker: Ranker,
}

impl HyperMemory {
    pub fn new(h: Mat, wm: Vec<f64>, wz: Vec<f64>, ranker: Ranker) -> Result<Self> {
        let m = Self { h, wm, wz, ranker };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.h.cols();
        if self.wm.len() != d || self.wz.len() != d {
            return Err(DraeError::Shape(format!("memory kernels must have dimension {d}")));
        }
        if self.ranker.w1.cols() != d {
            return Err(shape_err("ranker input", d, self.ranker.w1.cols()));
        }
        Ok(())
    }

    /// Random rows, decaying identity memory kernel `decay·e₀` and a small
    /// random input kernel.
    pub fn init(n: usize, dim: usize, decay: f64, rng: &mut Rng) -> Result<Self> {
        if n == 0 || dim == 0 {
            return Err(DraeError::InvalidParameter("memory needs N ≥ 1 rows of dimension ≥ 1".into()));
        }
        let mut wm = vec![0.0; dim];
        wm[0] = decay;
        let h = Mat::random(n, dim, 1.0, rng);
        let wz = rng.normal_vec(dim, 0.1 / (dim as f64).sqrt());
        let ranker = Ranker::new_random(dim, rng);
        Self::new(h, wm, wz, ranker)
    }

    pub fn rows(&self) -> usize {
        self.h.rows()
    }

    pub fn dim(&self) -> usize {
        self.h.cols()
    }
}

/// Row-wise `H[i] ← Wm ⊛ H[i] + Wz ⊛ z`.
pub fn memory_update(mem: &mut HyperMemory, z: &[f64]) -> Result<()> {
    if z.len() != mem.dim() {
        return Err(shape_err("memory input", mem.dim(), z.len()));
    }
    let drive = circ_conv_unchecked(&mem.wz, z);
    for i in 0..mem.rows() {
        let mut next = circ_conv_unchecked(&mem.wm, mem.h.row(i));
        for (n, d) in next.iter_mut().zip(&drive) {
            *n += d;
        }
        mem.h.row_mut(i).copy_from_slice(&next);
    }
    Ok(())
}

/// Pre-sigmoid scores of every memory row.
pub fn candidate_scores(mem: &HyperMemory) -> Vec<f64> {
    (0..mem.rows()).map(|i| mem.ranker.score(mem.h.row(i))).collect()
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Sigmoid confidences per row and the most confident row.
pub fn rank_candidates(mem: &HyperMemory) -> (Vec<f64>, usize) {
    let conf: Vec<f64> = candidate_scores(mem).into_iter().map(sigmoid).collect();
    let best = argmax(&conf);
    (conf, best)
}

/// Pairwise hinge loss pushing confidences to order like `returns`, averaged
/// over the strictly ordered pairs, with its gradient.
pub fn ranking_loss(mem: &HyperMemory, returns: &[f64]) -> Result<(f64, RankerGrad)> {
    if returns.len() != mem.rows() {
        return Err(shape_err("candidate returns", mem.rows(), returns.len()));
    }
    let (conf, _) = rank_candidates(mem);
    let n = conf.len();
    let mut d_conf = vec![0.0; n];
    let mut loss = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in 0..n {
            if returns[i] > returns[j] {
                pairs += 1;
                let slack = RANK_MARGIN - (conf[i] - conf[j]);
                if slack > 0.0 {
                    loss += slack;
                    d_conf[i] -= 1.0;
                    d_conf[j] += 1.0;
                }
            }
        }
    }
    let mut grad = mem.ranker.zero_grad();
    if pairs == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / pairs as f64;
    for i in 0..n {
        if d_conf[i] != 0.0 {
            let d_score = d_conf[i] * scale * conf[i] * (1.0 - conf[i]);
            mem.ranker.backward(mem.h.row(i), d_score, &mut grad);
        }
    }
    Ok((loss * scale, grad))
}
