//! Dense numeric kernels shared by every other module.
//!
//! Everything is `f64` and computed directly; there is no SIMD or FFT path.
//! Vectors are plain `Vec<f64>`/`&[f64]`, matrices are the row-major [`Mat`].

mod mat;
mod rng;

pub use mat::Mat;
pub use rng::Rng;

use crate::error::{shape_err, DraeError, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// `log Σ exp(v_i)` with max-shift.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(DraeError::InvalidInput("softmax of an empty vector".into()));
    }
    if !all_finite(logits) {
        return Err(DraeError::InvalidInput("softmax input has non-finite entries".into()));
    }
    Ok(softmax_unchecked(logits))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for o in &mut out {
        *o /= total;
    }
    out
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(shape_err("cosine_sim", a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(DraeError::DegenerateVector("cosine similarity of a zero-norm vector"));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Circular convolution, `out[i] = Σ_j a[j]·b[(i−j) mod D]`, evaluated directly in O(D²).
pub fn circ_conv(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(shape_err("circ_conv", a.len(), b.len()));
    }
    Ok(circ_conv_unchecked(a, b))
}

pub(crate) fn circ_conv_unchecked(a: &[f64], b: &[f64]) -> Vec<f64> {
    let d = a.len();
    let mut out = vec![0.0; d];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, aj) in a.iter().enumerate() {
            acc += aj * b[(i + d - j) % d];
        }
        *o = acc;
    }
    out
}

/// KL(p ‖ q) between diagonal Gaussians.
pub fn gauss_kl(p_mean: &[f64], p_var: &[f64], q_mean: &[f64], q_var: &[f64]) -> Result<f64> {
    let d = p_mean.len();
    for (name, v) in [("p_var", p_var), ("q_mean", q_mean), ("q_var", q_var)] {
        if v.len() != d {
            return Err(shape_err(name, d, v.len()));
        }
    }
    if p_var.iter().chain(q_var).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(DraeError::InvalidParameter("variances must be strictly positive".into()));
    }
    let mut kl = 0.0;
    for i in 0..d {
        let diff = p_mean[i] - q_mean[i];
        kl += 0.5 * ((q_var[i] / p_var[i]).ln() + (p_var[i] + diff * diff) / q_var[i] - 1.0);
    }
    // rounding can leave tiny negatives for identical arguments
    Ok(kl.max(0.0))
}

/// Log density of a diagonal Gaussian.
pub fn diag_normal_logpdf(z: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    const LN_2PI: f64 = 1.837_877_066_409_345_5;
    let mut acc = 0.0;
    for i in 0..z.len() {
        let diff = z[i] - mean[i];
        acc += -0.5 * (LN_2PI + var[i].ln() + diff * diff / var[i]);
    }
    acc
}

/// Least-squares slope of `ys` against `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform_and_shift() {
        let s = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for v in &s {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax(&[1000.0, 1000.0]).unwrap();
        assert_eq!(s, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_matches_high_precision() {
        // exp(x_i - 3) / Σ exp(x_j - 3) for [1, 2, 3], evaluated with 50-digit arithmetic
        let expected = [
            0.090_030_573_170_380_458_0,
            0.244_728_471_054_797_652_5,
            0.665_240_955_774_821_889_5,
        ];
        let s = softmax(&[1.0, 2.0, 3.0]).unwrap();
        for (a, b) in s.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(matches!(softmax(&[1.0, f64::NAN]), Err(DraeError::InvalidInput(_))));
        assert!(softmax(&[f64::INFINITY]).is_err());
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_sim(&[3.0, -1.0, 2.0], &[3.0, -1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let expected = 32.0 / (14f64.sqrt() * 77f64.sqrt());
        let brute = {
            let (a, b) = ([1.0, 2.0, 3.0], [4.0, 5.0, 6.0]);
            let mut d = 0.0;
            let mut na = 0.0f64;
            let mut nb = 0.0f64;
            for i in 0..3 {
                d += a[i] * b[i];
                na += a[i] * a[i];
                nb += b[i] * b[i];
            }
            d / (na.sqrt() * nb.sqrt())
        };
        assert!((expected - brute).abs() < 1e-15);
        let got = cosine_sim(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]), Err(DraeError::DegenerateVector(_))));
        assert!(matches!(cosine_sim(&[1.0], &[1.0, 0.0]), Err(DraeError::Shape(_))));
    }

    #[test]
    fn circ_conv_identity_and_shift() {
        let a = [1.5, -2.0, 0.25, 4.0];
        assert_eq!(circ_conv(&a, &[1.0, 0.0, 0.0, 0.0]).unwrap(), a.to_vec());
        assert_eq!(
            circ_conv(&[1.0, 2.0, 3.0], &[0.0, 1.0, 0.0]).unwrap(),
            vec![3.0, 1.0, 2.0]
        );
        assert!(circ_conv(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn gauss_kl_examples() {
        assert_eq!(gauss_kl(&[1.0, 2.0], &[0.5, 2.0], &[1.0, 2.0], &[0.5, 2.0]).unwrap(), 0.0);
        assert!((gauss_kl(&[3.0], &[1.0], &[0.0], &[1.0]).unwrap() - 4.5).abs() < 1e-15);
        assert!(matches!(
            gauss_kl(&[0.0], &[0.0], &[0.0], &[1.0]),
            Err(DraeError::InvalidParameter(_))
        ));
        assert!(gauss_kl(&[0.0], &[1.0], &[0.0], &[-1.0]).is_err());
    }

    #[test]
    fn ols_slope_exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        assert!((ols_slope(&xs, &ys) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_symmetric() {
        for x in [-40.0, -3.0, 0.0, 0.7, 35.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
