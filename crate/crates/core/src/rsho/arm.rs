use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{DraeError, Result};

/// Two-link planar arm, kinematics only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmState {
    pub q: [f64; 2],
    pub q_nom: [f64; 2],
    pub link_lengths: [f64; 2],
    pub kappa: f64,
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

impl ArmState {
    pub fn new(q: [f64; 2], q_nom: [f64; 2], link_lengths: [f64; 2], kappa: f64) -> Result<Self> {
        if link_lengths.iter().any(|l| !(*l > 0.0)) {
            return Err(DraeError::InvalidParameter("link lengths must be positive".into()));
        }
        if !(kappa >= 0.0) {
            return Err(DraeError::InvalidParameter("posture gain must be non-negative".into()));
        }
        Ok(Self { q: q.map(wrap_angle), q_nom, link_lengths, kappa })
    }

    pub fn end_effector(&self) -> [f64; 2] {
        let [l1, l2] = self.link_lengths;
        let [a, b] = self.q;
        [l1 * a.cos() + l2 * (a + b).cos(), l1 * a.sin() + l2 * (a + b).sin()]
    }

    /// Row-major 2×2 Jacobian of the end effector.
    pub fn jacobian(&self) -> [[f64; 2]; 2] {
        let [l1, l2] = self.link_lengths;
        let [a, b] = self.q;
        let (s1, c1) = a.sin_cos();
        let (s12, c12) = (a + b).sin_cos();
        [[-l1 * s1 - l2 * s12, -l2 * s12], [l1 * c1 + l2 * c12, l2 * c12]]
    }
}

/// `Jᵀ(JJᵀ + λ²I)⁻¹`.
pub fn damped_pseudo_inverse(j: [[f64; 2]; 2], damping: f64) -> [[f64; 2]; 2] {
    let l2 = damping * damping;
    let a = j[0][0] * j[0][0] + j[0][1] * j[0][1] + l2;
    let b = j[0][0] * j[1][0] + j[0][1] * j[1][1];
    let d = j[1][0] * j[1][0] + j[1][1] * j[1][1] + l2;
    let det = a * d - b * b;
    let inv = [[d / det, -b / det], [-b / det, a / det]];
    let mut out = [[0.0; 2]; 2];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = j[0][r] * inv[0][c] + j[1][r] * inv[1][c];
        }
    }
    out
}

/// One Euler step of `q̇ = J†(x_des − x) + κ(q_nom − q)`.
pub fn arm_step(arm: &ArmState, x_des: [f64; 2], damping: f64, dt: f64) -> Result<ArmState> {
    if !(damping > 0.0) {
        return Err(DraeError::InvalidParameter(format!("damping must be positive, got {damping}")));
    }
    if !(dt > 0.0) {
        return Err(DraeError::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let x = arm.end_effector();
    let err = [x_des[0] - x[0], x_des[1] - x[1]];
    let jp = damped_pseudo_inverse(arm.jacobian(), damping);
    let mut next = arm.clone();
    for i in 0..2 {
        let qdot = jp[i][0] * err[0] + jp[i][1] * err[1] + arm.kappa * (arm.q_nom[i] - arm.q[i]);
        next.q[i] = wrap_angle(arm.q[i] + dt * qdot);
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    #[test]
    fn fixed_point_at_target_and_nominal() {
        let arm = ArmState::new([0.4, 0.9], [0.4, 0.9], [1.0, 0.7], 0.5).unwrap();
        let next = arm_step(&arm, arm.end_effector(), 0.1, 0.01).unwrap();
        assert_eq!(next.q, arm.q);
    }

    #[test]
    fn stretched_pose_stays_finite() {
        let arm = ArmState::new([0.0, 0.0], [0.0, 0.0], [1.0, 1.0], 0.0).unwrap();
        let next = arm_step(&arm, [5.0, 0.0], 0.1, 0.01).unwrap();
        assert!(next.q.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn pseudo_inverse_matches_explicit_formula() {
        let j = [[0.3, -1.2], [0.8, 0.5]];
        let lam = 0.2;
        let jp = damped_pseudo_inverse(j, lam);
        // (JᵀJ + λ²I)⁻¹Jᵀ is the same matrix
        let a = j[0][0] * j[0][0] + j[1][0] * j[1][0] + lam * lam;
        let b = j[0][0] * j[0][1] + j[1][0] * j[1][1];
        let d = j[0][1] * j[0][1] + j[1][1] * j[1][1] + lam * lam;
        let det = a * d - b * b;
        let inv = [[d / det, -b / det], [-b / det, a / det]];
        for r in 0..2 {
            for c in 0..2 {
                let v = inv[r][0] * j[c][0] + inv[r][1] * j[c][1];
                assert!((jp[r][c] - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reaches_target_from_stretched_pose() {
        let mut arm = ArmState::new([0.0, 0.0], [0.0, 0.0], [1.0, 1.0], 0.0).unwrap();
        let target = [1.0, 1.0];
        let mut reached = None;
        for step in 0..2000 {
            arm = arm_step(&arm, target, 0.1, 1e-2).unwrap();
            if dist(arm.end_effector(), target) < 1e-2 {
                reached = Some(step);
                break;
            }
        }
        assert!(reached.is_some());
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_angle(0.25), 0.25);
    }
}
