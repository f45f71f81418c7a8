use serde::{Deserialize, Serialize};

use crate::error::{shape_err, DraeError, Result};
use crate::numerics::{sigmoid, Mat, Rng};

/// Low-rank gated fusion `h = W0·x + (Bl·Al·x) ⊙ σ(Ud·d)`.
///
/// Shapes: `W0` hidden×input, `Bl` hidden×r, `Al` r×input, `Ud` hidden×dim_e.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionParams {
    pub w0: Mat,
    pub bl: Mat,
    pub al: Mat,
    pub ud: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionGrad {
    pub w0: Mat,
    pub bl: Mat,
    pub al: Mat,
    pub ud: Mat,
}

#[derive(Debug, Clone)]
pub(crate) struct FusionTrace {
    pub low: Vec<f64>,
    pub branch: Vec<f64>,
    pub gate: Vec<f64>,
    pub out: Vec<f64>,
}

impl FusionParams {
    pub fn new(w0: Mat, bl: Mat, al: Mat, ud: Mat) -> Result<Self> {
        let p = Self { w0, bl, al, ud };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, n) = (self.w0.rows(), self.w0.cols());
        let r = self.al.rows();
        if r == 0 {
            return Err(DraeError::InvalidParameter("fusion rank must be at least 1".into()));
        }
        if self.bl.rows() != h || self.bl.cols() != r {
            return Err(DraeError::Shape(format!(
                "Bl is {}x{}, expected {h}x{r}",
                self.bl.rows(),
                self.bl.cols()
            )));
        }
        if self.al.cols() != n {
            return Err(shape_err("Al columns", n, self.al.cols()));
        }
        if self.ud.rows() != h {
            return Err(shape_err("Ud rows", h, self.ud.rows()));
        }
        Ok(())
    }

    /// Identity base, zero up-projection so fusion starts as a pass-through,
    /// random down-projection and gate.
    pub fn init(input_dim: usize, doc_dim: usize, rank: usize, rng: &mut Rng) -> Result<Self> {
        if rank == 0 || rank > input_dim {
            return Err(DraeError::InvalidParameter(format!("fusion rank {rank} outside 1..={input_dim}")));
        }
        Self::new(
            Mat::identity(input_dim),
            Mat::zeros(input_dim, rank),
            Mat::random(rank, input_dim, 1.0 / (input_dim as f64).sqrt(), rng),
            Mat::random(input_dim, doc_dim, 1.0 / (doc_dim as f64).sqrt(), rng),
        )
    }

    pub fn input_dim(&self) -> usize {
        self.w0.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w0.rows()
    }

    pub fn doc_dim(&self) -> usize {
        self.ud.cols()
    }

    pub fn rank(&self) -> usize {
        self.al.rows()
    }

    pub(crate) fn trace(&self, x: &[f64], d: &[f64]) -> FusionTrace {
        let low = self.al.mv(x);
        let branch = self.bl.mv(&low);
        let gate: Vec<f64> = self.ud.mv(d).into_iter().map(sigmoid).collect();
        let mut out = self.w0.mv(x);
        for i in 0..out.len() {
            out[i] += branch[i] * gate[i];
        }
        FusionTrace { low, branch, gate, out }
    }

    /// Accumulates parameter gradients for upstream gradient `dh`.
    pub(crate) fn backward(&self, x: &[f64], d: &[f64], tr: &FusionTrace, dh: &[f64], grad: &mut FusionGrad) {
        grad.w0.add_outer(1.0, dh, x);
        let dh_gate: Vec<f64> = dh.iter().zip(&tr.gate).map(|(g, s)| g * s).collect();
        grad.bl.add_outer(1.0, &dh_gate, &tr.low);
        let d_low = self.bl.mv_t(&dh_gate);
        grad.al.add_outer(1.0, &d_low, x);
        let d_pre: Vec<f64> = (0..dh.len()).map(|i| dh[i] * tr.branch[i] * tr.gate[i] * (1.0 - tr.gate[i])).collect();
        grad.ud.add_outer(1.0, &d_pre, d);
    }

    pub fn zero_grad(&self) -> FusionGrad {
        FusionGrad {
            w0: Mat::zeros(self.w0.rows(), self.w0.cols()),
            bl: Mat::zeros(self.bl.rows(), self.bl.cols()),
            al: Mat::zeros(self.al.rows(), self.al.cols()),
            ud: Mat::zeros(self.ud.rows(), self.ud.cols()),
        }
    }
}

impl FusionGrad {
    pub fn parts(&self) -> [&[f64]; 4] {
        [self.w0.as_slice(), self.bl.as_slice(), self.al.as_slice(), self.ud.as_slice()]
    }
}

/// Fused hidden state; a zero `d_agg` gives a gate of exactly one half.
pub fn fuse(params: &FusionParams, x: &[f64], d_agg: &[f64]) -> Result<Vec<f64>> {
    if x.len() != params.input_dim() {
        return Err(shape_err("fusion input", params.input_dim(), x.len()));
    }
    if d_agg.len() != params.doc_dim() {
        return Err(shape_err("aggregated document", params.doc_dim(), d_agg.len()));
    }
    Ok(params.trace(x, d_agg).out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_params(rng: &mut Rng) -> FusionParams {
        FusionParams::new(
            Mat::random(4, 3, 1.0, rng),
            Mat::random(4, 2, 1.0, rng),
            Mat::random(2, 3, 1.0, rng),
            Mat::random(4, 5, 1.0, rng),
        )
        .unwrap()
    }

    #[test]
    fn zero_up_projection_is_base_only() {
        let mut rng = Rng::new(1);
        let mut p = random_params(&mut rng);
        p.bl = Mat::zeros(4, 2);
        let x = [0.4, -1.0, 2.0];
        let d = [1.0, 2.0, 3.0, -4.0, 0.5];
        assert_eq!(fuse(&p, &x, &d).unwrap(), p.w0.matvec(&x).unwrap());
    }

    #[test]
    fn zero_document_halves_branch() {
        let mut rng = Rng::new(2);
        let p = random_params(&mut rng);
        let x = [1.0, 0.5, -0.5];
        let tr = p.trace(&x, &[0.0; 5]);
        assert!(tr.gate.iter().all(|g| *g == 0.5));
        let base = p.w0.matvec(&x).unwrap();
        let branch = p.bl.matvec(&p.al.matvec(&x).unwrap()).unwrap();
        for i in 0..4 {
            assert!((tr.out[i] - (base[i] + 0.5 * branch[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = Rng::new(3);
        let p = random_params(&mut rng);
        let x = rng.normal_vec(3, 1.0);
        let d = rng.normal_vec(5, 1.0);
        let out = fuse(&p, &x, &d).unwrap();
        for i in 0..4 {
            let mut base = 0.0;
            for j in 0..3 {
                base += p.w0.get(i, j) * x[j];
            }
            let mut branch = 0.0;
            for k in 0..2 {
                let mut a = 0.0;
                for j in 0..3 {
                    a += p.al.get(k, j) * x[j];
                }
                branch += p.bl.get(i, k) * a;
            }
            let mut pre = 0.0;
            for j in 0..5 {
                pre += p.ud.get(i, j) * d[j];
            }
            let expected = base + branch / (1.0 + (-pre).exp());
            assert!((out[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_validation() {
        let mut rng = Rng::new(4);
        let p = random_params(&mut rng);
        assert!(fuse(&p, &[1.0], &[0.0; 5]).is_err());
        assert!(fuse(&p, &[1.0; 3], &[0.0; 4]).is_err());
        assert!(FusionParams::new(Mat::zeros(4, 3), Mat::zeros(3, 2), Mat::zeros(2, 3), Mat::zeros(4, 5)).is_err());
        assert!(FusionParams::init(3, 2, 0, &mut rng).is_err());
    }
}
