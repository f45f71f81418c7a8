use serde::{Deserialize, Serialize};

use crate::error::{shape_err, DraeError, Result};
use crate::numerics::Rng;

/// Bound on each integral accumulator component.
pub const INTEGRAL_CLAMP: f64 = 100.0;
pub const GAIN_MAX: f64 = 10.0;
pub const DEFAULT_NOISE_VAR: f64 = 1e-4;

const FD_STEP: f64 = 1e-3;
const LEARNING_RATE: f64 = 1e-2;
const MAX_BACKTRACK: usize = 20;

/// Stochastic PID policy with Gaussian action noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidController {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub integral: Vec<f64>,
    pub prev_error: Vec<f64>,
    pub noise_cov_diag: Vec<f64>,
}

impl PidController {
    pub fn new(kp: f64, ki: f64, kd: f64, dim: usize) -> Result<Self> {
        if [kp, ki, kd].iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
            return Err(DraeError::InvalidParameter("PID gains must be finite and non-negative".into()));
        }
        Ok(Self {
            kp,
            ki,
            kd,
            integral: vec![0.0; dim],
            prev_error: vec![0.0; dim],
            noise_cov_diag: vec![DEFAULT_NOISE_VAR; dim],
        })
    }

    pub fn without_noise(mut self) -> Self {
        self.noise_cov_diag.iter_mut().for_each(|v| *v = 0.0);
        self
    }

    pub fn gains(&self) -> [f64; 3] {
        [self.kp, self.ki, self.kd]
    }

    pub fn with_gains(&self, g: [f64; 3]) -> Self {
        let mut c = self.clone();
        [c.kp, c.ki, c.kd] = g;
        c.reset();
        c
    }

    pub fn reset(&mut self) {
        self.integral.iter_mut().for_each(|v| *v = 0.0);
        self.prev_error.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn dim(&self) -> usize {
        self.integral.len()
    }
}

/// One control step: `kp·e + ki·∫e + kd·ė` plus noise, `e = x_des − x`.
pub fn pid_action(ctrl: &mut PidController, x_des: &[f64], x: &[f64], dt: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(DraeError::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let n = ctrl.dim();
    if x_des.len() != n || x.len() != n {
        return Err(shape_err("PID signal", n, if x_des.len() != n { x_des.len() } else { x.len() }));
    }
    let mut action = Vec::with_capacity(n);
    for i in 0..n {
        let e = x_des[i] - x[i];
        ctrl.integral[i] = (ctrl.integral[i] + e * dt).clamp(-INTEGRAL_CLAMP, INTEGRAL_CLAMP);
        let deriv = (e - ctrl.prev_error[i]) / dt;
        ctrl.prev_error[i] = e;
        let mut u = ctrl.kp * e + ctrl.ki * ctrl.integral[i] + ctrl.kd * deriv;
        let var = ctrl.noise_cov_diag[i];
        if var > 0.0 {
            u += var.sqrt() * rng.normal();
        }
        action.push(u);
    }
    Ok(action)
}

/// Closed-loop episode cost for a gain triple.
pub trait Env {
    fn cost(&self, ctrl: &PidController, rng: &mut Rng) -> f64;
}

/// Scalar plant `ẋ = u`, Euler-integrated, tracking a constant target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorPlant {
    pub x0: f64,
    pub target: f64,
    pub steps: usize,
    pub dt: f64,
}

impl Default for IntegratorPlant {
    fn default() -> Self {
        Self { x0: 0.0, target: 1.0, steps: 500, dt: 0.01 }
    }
}

impl IntegratorPlant {
    /// Error trajectory `e_t = target − x_t`, one entry per step after the action.
    pub fn errors(&self, ctrl: &PidController, rng: &mut Rng) -> Vec<f64> {
        let mut c = ctrl.clone();
        c.reset();
        let mut x = self.x0;
        let mut out = Vec::with_capacity(self.steps);
        for _ in 0..self.steps {
            // dims and dt are fixed by construction
            let u = pid_action(&mut c, &[self.target], &[x], self.dt, rng).map(|u| u[0]).unwrap_or(0.0);
            x += u * self.dt;
            out.push(self.target - x);
        }
        out
    }
}

impl Env for IntegratorPlant {
    /// Mean squared tracking error.
    fn cost(&self, ctrl: &PidController, rng: &mut Rng) -> f64 {
        let e = self.errors(ctrl, rng);
        e.iter().map(|v| v * v).sum::<f64>() / e.len().max(1) as f64
    }
}

/// `Σ c_i (g_i − g*_i)²`, a smooth stand-in with a known optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSurrogate {
    pub optimum: [f64; 3],
    pub curvature: [f64; 3],
}

impl Env for QuadraticSurrogate {
    fn cost(&self, ctrl: &PidController, _rng: &mut Rng) -> f64 {
        let g = ctrl.gains();
        (0..3).map(|i| self.curvature[i] * (g[i] - self.optimum[i]).powi(2)).sum()
    }
}

fn project(g: [f64; 3]) -> [f64; 3] {
    g.map(|v| v.clamp(0.0, GAIN_MAX))
}

/// Finite-difference gradient descent on the episode cost.
///
/// Each update evaluates every rollout with the same noise seed. Gradients
/// use central differences of width 1e-3 (one-sided at the bounds); steps
/// start at 1e-2 and are halved until the cost does not increase, so the
/// returned gains never cost more than the input gains.
pub fn adapt_gains(ctrl: &PidController, episodes: usize, env: &dyn Env, rng: &mut Rng) -> PidController {
    let mut cur = ctrl.clone();
    cur.reset();
    for _ in 0..episodes.max(1) {
        let seed = rng.next_u64();
        let eval = |g: [f64; 3]| env.cost(&cur.with_gains(g), &mut Rng::new(seed));
        let g = cur.gains();
        let base = eval(g);
        let mut grad = [0.0; 3];
        for i in 0..3 {
            let (mut hi, mut lo) = (g, g);
            hi[i] = (g[i] + FD_STEP).min(GAIN_MAX);
            lo[i] = (g[i] - FD_STEP).max(0.0);
            let span = hi[i] - lo[i];
            if span > 0.0 {
                grad[i] = (eval(hi) - eval(lo)) / span;
            }
        }
        let mut lr = LEARNING_RATE;
        for _ in 0..MAX_BACKTRACK {
            let cand = project([g[0] - lr * grad[0], g[1] - lr * grad[1], g[2] - lr * grad[2]]);
            if eval(cand) <= base {
                cur = cur.with_gains(cand);
                break;
            }
            lr *= 0.5;
        }
    }
    cur
}
