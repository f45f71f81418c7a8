use crate::error::{shape_err, Result};
use crate::numerics::{softmax_unchecked, Mat, Rng};

/// Two-layer ReLU network with a softmax head.
///
/// `w1` is `hidden × input` and `w2` is `output × hidden`, so both layers are
/// plain matrix-vector products.
#[derive(Debug, Clone, PartialEq)]
pub struct Expert {
    pub id: usize,
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
    pub owning_cluster: Option<usize>,
    pub frozen: bool,
}

/// Intermediate activations kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct ExpertTrace {
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub out: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertGrad {
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
}

impl Expert {
    pub fn new_random(
        id: usize,
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        scale: f64,
        rng: &mut Rng,
    ) -> Self {
        let s1 = scale / (input_dim as f64).sqrt();
        let s2 = scale / (hidden_dim as f64).sqrt();
        Self {
            id,
            w1: Mat::random(hidden_dim, input_dim, s1, rng),
            b1: vec![0.0; hidden_dim],
            w2: Mat::random(output_dim, hidden_dim, s2, rng),
            b2: vec![0.0; output_dim],
            owning_cluster: None,
            frozen: false,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.rows()
    }

    pub fn param_count(&self) -> usize {
        self.w1.as_slice().len() + self.b1.len() + self.w2.as_slice().len() + self.b2.len()
    }

    /// Class distribution for input `x`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(shape_err("expert input", self.input_dim(), x.len()));
        }
        Ok(self.trace(x).out)
    }

    pub(crate) fn trace(&self, x: &[f64]) -> ExpertTrace {
        let mut pre = self.w1.mv(x);
        for (p, b) in pre.iter_mut().zip(&self.b1) {
            *p += b;
        }
        let hidden: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        let mut logits = self.w2.mv(&hidden);
        for (l, b) in logits.iter_mut().zip(&self.b2) {
            *l += b;
        }
        ExpertTrace { pre, hidden, out: softmax_unchecked(&logits) }
    }

    /// Backpropagates `d_logits` (gradient w.r.t. the pre-softmax output) and
    /// accumulates into `grad`; returns the gradient w.r.t. the input.
    pub(crate) fn backward(
        &self,
        x: &[f64],
        trace: &ExpertTrace,
        d_logits: &[f64],
        grad: &mut ExpertGrad,
    ) -> Vec<f64> {
        grad.w2.add_outer(1.0, d_logits, &trace.hidden);
        for (g, d) in grad.b2.iter_mut().zip(d_logits) {
            *g += d;
        }
        let mut d_pre = self.w2.mv_t(d_logits);
        for (dp, p) in d_pre.iter_mut().zip(&trace.pre) {
            if *p <= 0.0 {
                *dp = 0.0;
            }
        }
        grad.w1.add_outer(1.0, &d_pre, x);
        for (g, d) in grad.b1.iter_mut().zip(&d_pre) {
            *g += d;
        }
        self.w1.mv_t(&d_pre)
    }

    pub fn zero_grad(&self) -> ExpertGrad {
        ExpertGrad {
            w1: Mat::zeros(self.w1.rows(), self.w1.cols()),
            b1: vec![0.0; self.b1.len()],
            w2: Mat::zeros(self.w2.rows(), self.w2.cols()),
            b2: vec![0.0; self.b2.len()],
        }
    }

    /// Parameters in the fixed order `w1, b1, w2, b2`.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(self.w1.as_slice());
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(self.w2.as_slice());
        v.extend_from_slice(&self.b2);
        v
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 4] {
        [self.w1.as_mut_slice(), &mut self.b1, self.w2.as_mut_slice(), &mut self.b2]
    }
}

impl ExpertGrad {
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend_from_slice(self.w1.as_slice());
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(self.w2.as_slice());
        v.extend_from_slice(&self.b2);
        v
    }

    pub fn parts(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
    }

    pub(crate) fn scale(&mut self, s: f64) {
        for v in self.w1.as_mut_slice().iter_mut().chain(self.b1.iter_mut()) {
            *v *= s;
        }
        for v in self.w2.as_mut_slice().iter_mut().chain(self.b2.iter_mut()) {
            *v *= s;
        }
    }
}
