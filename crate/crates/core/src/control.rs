//! Barrier-robustified finite-horizon LQR.
//!
//! The plant state is `x = [p_b - p_g; v_b]`, so the deputy position is `x_p + p_g` and
//! the control is the thrust itself.

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::PlantMatrices;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyEnvelope {
    pub r_min: f64,
    pub r_max: f64,
    pub a_max: f64,
    pub gamma_phi: f64,
    pub l_h: f64,
    pub epsilon_r: f64,
    pub beta: f64,
    pub alpha_gain: f64,
    /// Upper limit on the robustifying offset `L_h M(t)`; infinite means uncapped.
    pub offset_cap: f64,
}

impl SafetyEnvelope {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.a_max, self.gamma_phi, self.l_h, self.beta, self.alpha_gain];
        if !(self.r_min > 0.0 && self.r_min < self.r_max) || positive.iter().any(|g| !(*g > 0.0)) {
            return Err(Error::InvalidArgument("safety envelope needs r_min < r_max and positive gains".into()));
        }
        if !(self.epsilon_r >= 0.0) || !(self.offset_cap >= 0.0) {
            return Err(Error::InvalidArgument("epsilon_r and offset cap must be non-negative".into()));
        }
        Ok(())
    }
}

/// Constraint value with its gradient over `(p_bh, v_bh)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HEval {
    pub h: f64,
    pub h_koz: f64,
    pub h_kiz: f64,
    pub grad: Vector6<f64>,
    /// A square-root argument was negative and clamped to zero.
    pub clamped: bool,
}

/// Harmonic KOZ/KIZ combination `h_koz h_kiz / (h_koz + h_kiz)`.
pub fn constraint_h(p_bh: &Vector3<f64>, v_bh: &Vector3<f64>, env: &SafetyEnvelope) -> Result<HEval> {
    let r = p_bh.norm();
    if !(r > 0.0) || !r.is_finite() || !v_bh.iter().all(|c| c.is_finite()) {
        return Err(Error::NonFinite("constraint state"));
    }
    let e = p_bh / r;
    let v_proj = v_bh.dot(&e);
    let dvp_dp = (v_bh - e * v_proj) / r;
    let s1 = 2.0 * env.a_max * (r - env.r_min);
    let s2 = 2.0 * env.a_max * (env.r_max - r);
    let clamped = s1 < 0.0 || s2 < 0.0;
    let (q1, q2) = (s1.max(0.0).sqrt(), s2.max(0.0).sqrt());
    // d sqrt(s)/dr = a_max / sqrt(s); zero once the argument is clamped.
    let d1 = if q1 > 0.0 { env.a_max / q1 } else { 0.0 };
    let d2 = if q2 > 0.0 { -env.a_max / q2 } else { 0.0 };
    let h_koz = q1 + v_proj;
    let h_kiz = q2 + v_proj;
    let gk_p = e * d1 + dvp_dp;
    let gi_p = e * d2 + dvp_dp;
    let sum = h_koz + h_kiz;
    let (h, wk, wi) = if sum > 1e-12 {
        (h_koz * h_kiz / sum, (h_kiz / sum).powi(2), (h_koz / sum).powi(2))
    } else if h_koz <= h_kiz {
        (h_koz, 1.0, 0.0)
    } else {
        (h_kiz, 0.0, 1.0)
    };
    let gp = gk_p * wk + gi_p * wi;
    let gv = e * (wk + wi);
    let grad = Vector6::new(gp.x, gp.y, gp.z, gv.x, gv.y, gv.z);
    Ok(HEval { h, h_koz, h_kiz, grad, clamped })
}

fn split(x: &Vector6<f64>) -> (Vector3<f64>, Vector3<f64>) {
    (Vector3::new(x[0], x[1], x[2]), Vector3::new(x[3], x[4], x[5]))
}

/// Constraint at plant state `x` for a goal at `p_g`.
pub fn constraint_h_state(x: &Vector6<f64>, p_g: &Vector3<f64>, env: &SafetyEnvelope) -> Result<HEval> {
    let (p, v) = split(x);
    constraint_h(&(p + p_g), &v, env)
}

/// Worst-case initial position error over the admissible range interval.
///
/// The deputy lies somewhere on the ray `p_h - r u_bh`; the error norm is convex in `r`, so
/// the maximum sits at an endpoint.
pub fn epsilon_r(p_h: &Vector3<f64>, u_bh: &Vector3<f64>, p_b_hat: &Vector3<f64>, r_min: f64, r_max: f64) -> f64 {
    let at = |r: f64| (p_h - u_bh * r - p_b_hat).norm();
    at(r_min).max(at(r_max))
}

/// `(L_h M(t), d/dt L_h M(t))` with the cap applied.
pub fn robust_offset(t: f64, env: &SafetyEnvelope) -> (f64, f64) {
    let raw = env.l_h * env.epsilon_r * (-env.beta * t).exp();
    if raw > env.offset_cap {
        (env.offset_cap, 0.0)
    } else {
        (raw, -env.beta * raw)
    }
}

/// `h - L_h M(t)`, `t` measured from the segment start.
pub fn robustified_h(h: f64, t: f64, env: &SafetyEnvelope) -> f64 {
    h - robust_offset(t, env).0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierEval {
    pub phi: f64,
    pub grad_x: Vector6<f64>,
    pub grad_t: f64,
    pub h: f64,
    pub h_r: f64,
    pub h_r0: f64,
    pub clamped: bool,
}

/// `Phi = (gamma/h_r(x,t) - gamma/h_r(0,t))^2` with analytic derivatives; `h0 = h(0)`.
pub fn barrier_phi(x: &Vector6<f64>, t: f64, p_g: &Vector3<f64>, env: &SafetyEnvelope, h0: f64) -> Result<BarrierEval> {
    let he = constraint_h_state(x, p_g, env)?;
    let (off, doff) = robust_offset(t, env);
    let h_r = he.h - off;
    let h_r0 = h0 - off;
    if !(h_r > 0.0) || !(h_r0 > 0.0) {
        return Err(Error::SafetyFault {
            t,
            reason: format!("robustified constraint non-positive (h_r = {h_r:e}, h_r(0) = {h_r0:e})"),
        });
    }
    let g = env.gamma_phi;
    let diff = g / h_r - g / h_r0;
    let phi = diff * diff;
    let grad_x = he.grad * (-2.0 * diff * g / (h_r * h_r));
    // d h_r / dt = -doff for both terms.
    let grad_t = 2.0 * diff * (g / (h_r * h_r) - g / (h_r0 * h_r0)) * doff;
    Ok(BarrierEval { phi, grad_x, grad_t, h: he.h, h_r, h_r0, clamped: he.clamped })
}

/// Barrier constraint value `grad_x Phi (A x + B u) + d_t Phi - alpha h_r`.
pub fn constraint_value(
    x: &Vector6<f64>,
    u: &Vector3<f64>,
    be: &BarrierEval,
    plant: &PlantMatrices,
    env: &SafetyEnvelope,
) -> f64 {
    be.grad_x.dot(&(plant.a * x + plant.b * u)) + be.grad_t - env.alpha_gain * be.h_r
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiplierEval {
    pub lambda: f64,
    pub c_nominal: f64,
    pub c_corrected: f64,
}

/// Multiplier that drives the constraint value to zero when the nominal input violates it.
pub fn lagrange_multiplier(
    x_hat: &Vector6<f64>,
    u_nominal: &Vector3<f64>,
    be: &BarrierEval,
    plant: &PlantMatrices,
    r: &Matrix3<f64>,
    env: &SafetyEnvelope,
) -> Result<MultiplierEval> {
    let c_nom = constraint_value(x_hat, u_nominal, be, plant, env);
    if !c_nom.is_finite() {
        return Err(Error::NonFinite("barrier constraint value"));
    }
    if c_nom <= 0.0 {
        return Ok(MultiplierEval { lambda: 0.0, c_nominal: c_nom, c_corrected: c_nom });
    }
    let r_inv = r.try_inverse().ok_or_else(|| Error::Numeric("singular input penalty".into()))?;
    let gb = plant.b.transpose() * be.grad_x;
    let denom = gb.dot(&(r_inv * gb));
    if !(denom > f64::MIN_POSITIVE) || !denom.is_finite() {
        return Err(Error::Numeric("active barrier with vanishing input direction".into()));
    }
    let lambda = 2.0 * c_nom / denom;
    let u = control_correction(u_nominal, lambda, be, plant, &r_inv);
    let c_corr = constraint_value(x_hat, &u, be, plant, env);
    Ok(MultiplierEval { lambda, c_nominal: c_nom, c_corrected: c_corr })
}

fn control_correction(
    u_nominal: &Vector3<f64>,
    lambda: f64,
    be: &BarrierEval,
    plant: &PlantMatrices,
    r_inv: &Matrix3<f64>,
) -> Vector3<f64> {
    u_nominal - r_inv * (plant.b.transpose() * be.grad_x) * (0.5 * lambda)
}

/// `-R^-1 B^T P x`.
pub fn lqr_input(x_hat: &Vector6<f64>, p: &Matrix6<f64>, r: &Matrix3<f64>, plant: &PlantMatrices) -> Result<Vector3<f64>> {
    let r_inv = r.try_inverse().ok_or_else(|| Error::Numeric("singular input penalty".into()))?;
    Ok(-(r_inv * plant.b.transpose() * p * x_hat))
}

/// `-R^-1 B^T P x - 1/2 R^-1 B^T lambda grad Phi^T`.
pub fn control(
    x_hat: &Vector6<f64>,
    p: &Matrix6<f64>,
    lambda: f64,
    grad_phi: &Vector6<f64>,
    r: &Matrix3<f64>,
    plant: &PlantMatrices,
) -> Result<Vector3<f64>> {
    let r_inv = r.try_inverse().ok_or_else(|| Error::Numeric("singular input penalty".into()))?;
    let bt = plant.b.transpose();
    Ok(-(r_inv * bt * p * x_hat) - r_inv * bt * grad_phi * (0.5 * lambda))
}

/// Effective state penalty `Q + gamma_c C^T n_c n_c^T C` with `C` the velocity selector.
pub fn effective_q(q: &Matrix6<f64>, gamma_c: f64, n_c: &Vector3<f64>) -> Matrix6<f64> {
    let c = PlantMatrices::velocity_selector();
    q + c.transpose() * (n_c * n_c.transpose()) * c * gamma_c
}

fn riccati_rhs(p: &Matrix6<f64>, a: &Matrix6<f64>, s: &Matrix6<f64>, q_bar: &Matrix6<f64>) -> Matrix6<f64> {
    // dP/dt = -A^T P - P A + P S P - Q_bar with S = B R^-1 B^T.
    -(a.transpose() * p) - p * a + p * s * p - q_bar
}

fn symmetrize(p: &Matrix6<f64>) -> Matrix6<f64> {
    (p + p.transpose()) * 0.5
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub t0: f64,
    pub tf: f64,
    /// Uniform grid spacing.
    pub h: f64,
    /// `p[k]` is `P(t0 + k h)`; the last entry is `Q_f`.
    pub p: Vec<Matrix6<f64>>,
    pub q_bar: Matrix6<f64>,
    pub q_f: Matrix6<f64>,
    pub r: Matrix3<f64>,
    pub gamma_c: f64,
    pub p_lower: f64,
    pub p_upper: f64,
}

impl RiccatiSolution {
    pub fn grid_time(&self, k: usize) -> f64 {
        if k + 1 == self.p.len() {
            self.tf
        } else {
            self.t0 + k as f64 * self.h
        }
    }

    /// Linear interpolation with symmetrization; clamps outside the horizon.
    pub fn at(&self, t: f64) -> Matrix6<f64> {
        let n = self.p.len();
        if n == 1 || t <= self.t0 {
            return self.p[0];
        }
        if t >= self.tf {
            return self.p[n - 1];
        }
        let s = (t - self.t0) / self.h;
        let k = (s.floor() as usize).min(n - 2);
        let w = (s - k as f64).clamp(0.0, 1.0);
        symmetrize(&(self.p[k] * (1.0 - w) + self.p[k + 1] * w))
    }

    /// Riccati right-hand side at stored node `k`.
    pub fn rhs_at(&self, k: usize, plant: &PlantMatrices) -> Result<Matrix6<f64>> {
        let s = input_weight(plant, &self.r)?;
        Ok(riccati_rhs(&self.p[k], &plant.a, &s, &self.q_bar))
    }
}

fn input_weight(plant: &PlantMatrices, r: &Matrix3<f64>) -> Result<Matrix6<f64>> {
    let r_inv = r.try_inverse().ok_or_else(|| Error::Numeric("singular input penalty".into()))?;
    Ok(plant.b * r_inv * plant.b.transpose())
}

fn check_spd(m: &Matrix6<f64>, name: &str) -> Result<()> {
    if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) || m.cholesky().is_none() {
        return Err(Error::InvalidArgument(format!("{name} must be symmetric positive definite")));
    }
    Ok(())
}

/// Backward RK4 integration of the Riccati equation from `P(tf) = Q_f`.
///
/// `steps` is the number of uniform intervals on `[t0, tf]`.
#[allow(clippy::too_many_arguments)]
pub fn solve_riccati(
    q: &Matrix6<f64>,
    r: &Matrix3<f64>,
    q_f: &Matrix6<f64>,
    gamma_c: f64,
    n_c: &Vector3<f64>,
    plant: &PlantMatrices,
    t0: f64,
    tf: f64,
    steps: usize,
) -> Result<RiccatiSolution> {
    if !(tf > t0) || steps == 0 {
        return Err(Error::InvalidArgument(format!("empty Riccati horizon [{t0}, {tf}] / {steps}")));
    }
    if !(gamma_c >= 0.0) {
        return Err(Error::InvalidArgument(format!("orthogonality gain must be non-negative, got {gamma_c}")));
    }
    check_spd(q, "Q")?;
    check_spd(q_f, "Q_f")?;
    if r.cholesky().is_none() {
        return Err(Error::InvalidArgument("R must be positive definite".into()));
    }
    let q_bar = effective_q(q, gamma_c, n_c);
    let s = input_weight(plant, r)?;
    let a = plant.a;
    let h = (tf - t0) / steps as f64;
    let f = |p: &Matrix6<f64>| riccati_rhs(p, &a, &s, &q_bar);
    let mut p = vec![Matrix6::zeros(); steps + 1];
    p[steps] = *q_f;
    let mut cur = *q_f;
    let stride = (steps / 200).max(1);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    let mut track = |m: &Matrix6<f64>| {
        let e = SymmetricEigen::new(*m).eigenvalues;
        lo = lo.min(e.min());
        hi = hi.max(e.max());
    };
    track(&cur);
    for k in (0..steps).rev() {
        // Stepping backward in time: P(t - h) = P(t) - h * dP/dt.
        let k1 = f(&cur);
        let k2 = f(&(cur - k1 * (0.5 * h)));
        let k3 = f(&(cur - k2 * (0.5 * h)));
        let k4 = f(&(cur - k3 * h));
        cur = symmetrize(&(cur - (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)));
        if !cur.iter().all(|c| c.is_finite()) {
            return Err(Error::Numeric("non-finite Riccati solution".into()));
        }
        if cur.cholesky().is_none() {
            let t = t0 + k as f64 * h;
            let min_eig = SymmetricEigen::new(cur).eigenvalues.min();
            return Err(Error::RiccatiIndefinite { t, min_eig });
        }
        if k % stride == 0 {
            track(&cur);
        }
        p[k] = cur;
    }
    Ok(RiccatiSolution { t0, tf, h, p, q_bar, q_f: *q_f, r: *r, gamma_c, p_lower: lo, p_upper: hi })
}
