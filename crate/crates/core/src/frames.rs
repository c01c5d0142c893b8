//! Hill-frame relative dynamics and sun geometry.
//!
//! The deputy's position and velocity relative to the chief are propagated with
//! the Clohessy-Wiltshire equations under a constant thrust over each fixed step.
//! The sun direction rotates in the Hill x-y plane at the chief's mean motion.

use nalgebra::{Matrix3x6, Matrix6, Matrix6x3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Deputy state relative to the chief, Hill frame (x radial, y along-track).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HillState {
    /// Position of the deputy relative to the chief center, m.
    pub p_bh: Vector3<f64>,
    /// Velocity of the deputy relative to the chief, m/s.
    pub v_bh: Vector3<f64>,
    /// Simulation time, s.
    pub t: f64,
}

impl HillState {
    pub fn new(p_bh: Vector3<f64>, v_bh: Vector3<f64>, t: f64) -> Self {
        Self { p_bh, v_bh, t }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros(), 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.p_bh.iter().chain(self.v_bh.iter()).all(|c| c.is_finite()) && self.t.is_finite()
    }

    /// Range from the chief center.
    pub fn range(&self) -> f64 {
        self.p_bh.norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SunState {
    /// Sun angle in the Hill x-y plane, rad, kept in (-pi, pi].
    pub theta_s: f64,
    /// Mean motion of the chief, rad/s.
    pub n: f64,
}

impl SunState {
    pub fn new(theta_s: f64, n: f64) -> Self {
        Self { theta_s: wrap_angle(theta_s), n }
    }
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Linear CW plant `x' = A x + B u` for the 6-state (position, velocity).
#[derive(Debug, Clone, PartialEq)]
pub struct PlantMatrices {
    pub a: Matrix6<f64>,
    pub b: Matrix6x3<f64>,
    /// Deputy mass, kg.
    pub m: f64,
    /// Mean motion, rad/s.
    pub n: f64,
}

impl PlantMatrices {
    pub fn new(m: f64, n: f64) -> Result<Self> {
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::InvalidArgument(format!("deputy mass must be positive, got {m}")));
        }
        if !n.is_finite() {
            return Err(Error::NonFinite("mean motion"));
        }
        let mut a = Matrix6::zeros();
        a[(0, 3)] = 1.0;
        a[(1, 4)] = 1.0;
        a[(2, 5)] = 1.0;
        a[(3, 0)] = 3.0 * n * n;
        a[(3, 4)] = 2.0 * n;
        a[(4, 3)] = -2.0 * n;
        a[(5, 2)] = -n * n;
        let mut b = Matrix6x3::zeros();
        for i in 0..3 {
            b[(3 + i, i)] = 1.0 / m;
        }
        Ok(Self { a, b, m, n })
    }

    /// Selects the velocity block of the state, `C = [0 I]`.
    pub fn velocity_selector() -> Matrix3x6<f64> {
        let mut c = Matrix3x6::zeros();
        for i in 0..3 {
            c[(i, 3 + i)] = 1.0;
        }
        c
    }
}

/// CW right-hand side: returns (velocity, acceleration).
pub fn cw_derivative(
    state: &HillState,
    force: &Vector3<f64>,
    params: &PlantMatrices,
) -> Result<(Vector3<f64>, Vector3<f64>)> {
    if !state.is_finite() {
        return Err(Error::NonFinite("hill state"));
    }
    if !force.iter().all(|c| c.is_finite()) {
        return Err(Error::NonFinite("force"));
    }
    Ok(cw_rhs(&state.p_bh, &state.v_bh, force, params))
}

fn cw_rhs(
    p: &Vector3<f64>,
    v: &Vector3<f64>,
    force: &Vector3<f64>,
    params: &PlantMatrices,
) -> (Vector3<f64>, Vector3<f64>) {
    let n = params.n;
    let inv_m = 1.0 / params.m;
    let acc = Vector3::new(
        2.0 * n * v.y + 3.0 * n * n * p.x + force.x * inv_m,
        -2.0 * n * v.x + force.y * inv_m,
        -n * n * p.z + force.z * inv_m,
    );
    (*v, acc)
}

/// Classical RK4 advance of the Hill state by `dt` under a force held constant over the step.
pub fn step_rk4(
    state: &HillState,
    force: &Vector3<f64>,
    dt: f64,
    params: &PlantMatrices,
) -> Result<HillState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("step must be positive, got {dt}")));
    }
    if !state.is_finite() {
        return Err(Error::NonFinite("hill state"));
    }
    if !force.iter().all(|c| c.is_finite()) {
        return Err(Error::NonFinite("force"));
    }
    let (p0, v0) = (state.p_bh, state.v_bh);
    let (k1p, k1v) = cw_rhs(&p0, &v0, force, params);
    let (k2p, k2v) = cw_rhs(&(p0 + k1p * (dt / 2.0)), &(v0 + k1v * (dt / 2.0)), force, params);
    let (k3p, k3v) = cw_rhs(&(p0 + k2p * (dt / 2.0)), &(v0 + k2v * (dt / 2.0)), force, params);
    let (k4p, k4v) = cw_rhs(&(p0 + k3p * dt), &(v0 + k3v * dt), force, params);
    let p = p0 + (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (dt / 6.0);
    let v = v0 + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0);
    Ok(HillState::new(p, v, state.t + dt))
}

/// Sun angle advance, `theta_s' = -n`. The ODE is linear so the step is exact.
pub fn sun_step(sun: &SunState, dt: f64) -> Result<SunState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("step must be positive, got {dt}")));
    }
    if sun.n == 0.0 {
        return Ok(*sun);
    }
    Ok(SunState { theta_s: wrap_angle(sun.theta_s - sun.n * dt), n: sun.n })
}

/// Unit vector from the chief center toward the sun.
pub fn sun_unit_vector(sun: &SunState) -> Vector3<f64> {
    let (s, c) = sun.theta_s.sin_cos();
    Vector3::new(c, s, 0.0)
}
