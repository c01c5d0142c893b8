//! Memory-regression distance observer.
//!
//! Per feature the unknowns are `theta = (r_bh, r_bk, r_kh)`: deputy to feature, deputy to
//! key-frame origin, and key-frame origin to feature. Bearings are measured from the deputy:
//! `u_bh` points at the feature, `u_bk` points back at the key-frame origin and `u_kh` is the
//! key-frame line of sight to the feature, so `u_bh r_bh - u_bk r_bk = u_kh r_kh`.

use std::collections::VecDeque;

use nalgebra::{Matrix2, Matrix3x2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sigma {
    /// Frozen: out of view, rank deficient, or not enough data yet.
    U,
    /// Active estimation.
    A,
}

impl Sigma {
    pub fn as_str(self) -> &'static str {
        match self {
            Sigma::U => "u",
            Sigma::A => "a",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressorKind {
    Windowed,
    Filtered,
}

impl std::str::FromStr for RegressorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "windowed" => Ok(Self::Windowed),
            "filtered" => Ok(Self::Filtered),
            other => Err(Error::Config(format!("unknown regressor '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyFrame {
    pub t_key: f64,
    pub u_kh: Vector3<f64>,
    /// Ground-truth deputy position at key time; only used for error reporting.
    pub p_key: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub r_bh_hat: f64,
    pub r_bk_hat: f64,
    pub r_kh_hat: f64,
}

impl ThetaEstimate {
    pub fn new(r_bh_hat: f64, r_bk_hat: f64, r_kh_hat: f64) -> Self {
        Self { r_bh_hat, r_bk_hat, r_kh_hat }
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.r_bh_hat, self.r_bk_hat, self.r_kh_hat)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

/// Box of admissible estimates with a C1 rate blend near its faces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionBox {
    pub lo: Vector3<f64>,
    pub hi: Vector3<f64>,
    /// Blend width as a fraction of each side's span.
    pub layer_frac: f64,
}

impl ProjectionBox {
    pub fn new(r_min: f64, r_max: f64, r_lower: f64, layer_frac: f64) -> Result<Self> {
        if !(r_min > 0.0 && r_min < r_max && r_lower > 0.0 && r_lower < 2.0 * r_max) {
            return Err(Error::InvalidArgument("inconsistent projection bounds".into()));
        }
        if !(0.0..0.5).contains(&layer_frac) {
            return Err(Error::InvalidArgument(format!("layer fraction {layer_frac} not in [0, 0.5)")));
        }
        Ok(Self {
            lo: Vector3::new(r_min, r_lower, r_min),
            hi: Vector3::new(r_max, 2.0 * r_max, r_max),
            layer_frac,
        })
    }

    pub fn contains(&self, theta: &Vector3<f64>) -> bool {
        (0..3).all(|i| theta[i] >= self.lo[i] && theta[i] <= self.hi[i])
    }

    pub fn clamp(&self, theta: &Vector3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|i, _| theta[i].clamp(self.lo[i], self.hi[i]))
    }

    /// Worst-case error norm for estimate and truth inside the box.
    pub fn diameter(&self) -> f64 {
        (self.hi - self.lo).norm()
    }

    /// Attenuates outward components of `rate` inside the boundary layer.
    pub fn project_rate(&self, theta: &Vector3<f64>, rate: &Vector3<f64>) -> Vector3<f64> {
        let mut out = *rate;
        for i in 0..3 {
            let w = self.layer_frac * (self.hi[i] - self.lo[i]);
            if w <= 0.0 {
                continue;
            }
            let s = if rate[i] > 0.0 {
                (theta[i] - (self.hi[i] - w)) / w
            } else if rate[i] < 0.0 {
                ((self.lo[i] + w) - theta[i]) / w
            } else {
                continue;
            };
            let s = s.clamp(0.0, 1.0);
            out[i] *= 1.0 - s * s * (3.0 - 2.0 * s);
        }
        out
    }

    /// One projected explicit step: blended rate, then exact clamp.
    pub fn step(&self, theta: &Vector3<f64>, rate: &Vector3<f64>, dt: f64) -> Vector3<f64> {
        self.clamp(&(theta + self.project_rate(theta, rate) * dt))
    }
}

/// `Y = [u_bh, -u_bk]`.
pub fn regressor_y(u_bh: &Vector3<f64>, u_bk: &Vector3<f64>) -> Matrix3x2<f64> {
    Matrix3x2::from_columns(&[*u_bh, -*u_bk])
}

/// Closed-form eigenvalues of a symmetric 2x2 matrix, ascending.
pub fn sym2_eigenvalues(m: &Matrix2<f64>) -> (f64, f64) {
    let a = m[(0, 0)];
    let d = m[(1, 1)];
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let mean = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    (mean - rad, mean + rad)
}

pub fn gram_lambda_min(y: &Matrix3x2<f64>) -> f64 {
    sym2_eigenvalues(&(y.transpose() * y)).0
}

/// Condition number of a symmetric positive semidefinite 2x2 matrix.
pub fn sym2_cond(m: &Matrix2<f64>) -> f64 {
    let (lo, hi) = sym2_eigenvalues(m);
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiSolution {
    pub psi: Vector2<f64>,
    /// `|Y psi - u_kh|`.
    pub residual: f64,
}

/// `psi = (Y^T Y)^-1 Y^T u_kh`; requires `lambda_min(Y^T Y) > lambda_a`.
pub fn psi(y: &Matrix3x2<f64>, u_kh: &Vector3<f64>, lambda_a: f64) -> Result<PsiSolution> {
    let g = y.transpose() * y;
    let (lmin, _) = sym2_eigenvalues(&g);
    if !(lmin > lambda_a) {
        return Err(Error::InsufficientExcitation(format!(
            "lambda_min(Y^T Y) = {lmin:e} <= {lambda_a:e}"
        )));
    }
    let inv = g
        .try_inverse()
        .ok_or_else(|| Error::Numeric("singular bearing gram matrix".into()))?;
    let p = inv * (y.transpose() * u_kh);
    let residual = (y * p - u_kh).norm();
    Ok(PsiSolution { psi: p, residual })
}

/// Range-rate measurement `Xi = (dr_bh/dt, dr_bk/dt)` from bearings and deputy velocity.
pub fn range_rates(u_bh: &Vector3<f64>, u_bk: &Vector3<f64>, v_bh: &Vector3<f64>) -> Vector2<f64> {
    Vector2::new(-u_bh.dot(v_bh), -u_bk.dot(v_bh))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StackSample {
    pub y: [f64; 2],
    pub u: [f64; 2],
    pub t_s: f64,
}

impl StackSample {
    pub fn new(y: Vector2<f64>, u: Vector2<f64>, t_s: f64) -> Self {
        Self { y: [y.x, y.y], u: [u.x, u.y], t_s }
    }

    pub fn y(&self) -> Vector2<f64> {
        Vector2::new(self.y[0], self.y[1])
    }

    pub fn u(&self) -> Vector2<f64> {
        Vector2::new(self.u[0], self.u[1])
    }

    /// Normalized contribution `(Y^T Y, Y^T U) / (1 + |Y|^2)`.
    pub fn contribution(&self) -> (f64, f64) {
        let y = self.y();
        let w = 1.0 + y.norm_squared();
        (y.norm_squared() / w, y.dot(&self.u()) / w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryStack {
    pub capacity: usize,
    pub samples: Vec<StackSample>,
    pub sigma_y: f64,
    pub sigma_u: f64,
    /// Accumulators are rebuilt from the samples every this many inserts.
    pub verify_every: usize,
    inserts_since_verify: usize,
    worst_drift: f64,
}

impl HistoryStack {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("history stack capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            samples: Vec::with_capacity(capacity),
            sigma_y: 0.0,
            sigma_u: 0.0,
            verify_every: 64,
            inserts_since_verify: 0,
            worst_drift: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.samples.len() >= self.capacity
    }

    pub fn purge(&mut self) {
        self.samples.clear();
        self.sigma_y = 0.0;
        self.sigma_u = 0.0;
        self.inserts_since_verify = 0;
    }

    /// Sums recomputed from scratch.
    pub fn recompute(&self) -> (f64, f64) {
        self.samples.iter().fold((0.0, 0.0), |(sy, su), s| {
            let (cy, cu) = s.contribution();
            (sy + cy, su + cu)
        })
    }

    /// Largest accumulator drift seen at a verification point.
    pub fn worst_drift(&self) -> f64 {
        self.worst_drift
    }

    /// Appends, or replaces the sample whose swap most increases `sigma_y`.
    /// Returns whether the sample was kept.
    pub fn insert(&mut self, sample: StackSample) -> bool {
        let (cy, cu) = sample.contribution();
        if !cy.is_finite() || !cu.is_finite() {
            return false;
        }
        let accepted = if !self.is_full() {
            self.samples.push(sample);
            self.sigma_y += cy;
            self.sigma_u += cu;
            true
        } else {
            let mut best: Option<(usize, f64)> = None;
            for (j, s) in self.samples.iter().enumerate() {
                let gain = cy - s.contribution().0;
                if gain > 0.0 && best.map_or(true, |(_, g)| gain > g) {
                    best = Some((j, gain));
                }
            }
            match best {
                Some((j, _)) => {
                    let (oy, ou) = self.samples[j].contribution();
                    self.samples[j] = sample;
                    self.sigma_y += cy - oy;
                    self.sigma_u += cu - ou;
                    true
                }
                None => false,
            }
        };
        if accepted {
            self.inserts_since_verify += 1;
            if self.inserts_since_verify >= self.verify_every {
                self.verify();
            }
        }
        accepted
    }

    fn verify(&mut self) {
        let (sy, su) = self.recompute();
        let drift = (sy - self.sigma_y).abs().max((su - self.sigma_u).abs());
        self.worst_drift = self.worst_drift.max(drift);
        self.sigma_y = sy;
        self.sigma_u = su;
        self.inserts_since_verify = 0;
    }

    /// 2x2 normalized outer-product sum whose trace is `sigma_y`.
    pub fn outer_sum(&self) -> Matrix2<f64> {
        self.samples.iter().fold(Matrix2::zeros(), |acc, s| {
            let y = s.y();
            acc + y * y.transpose() / (1.0 + y.norm_squared())
        })
    }

    /// Condition number of the normalized stacked regressor, i.e. the square root
    /// of the condition number of [`Self::outer_sum`].
    pub fn regressor_cond(&self) -> f64 {
        sym2_cond(&self.outer_sum()).sqrt()
    }
}

/// `r_kh = sigma_u / sigma_y`.
pub fn solve_r_kh(stack: &HistoryStack, sigma_lower: f64) -> Result<f64> {
    if !(stack.sigma_y > sigma_lower) || stack.is_empty() {
        return Err(Error::InsufficientExcitation(format!(
            "stack sum {:e} <= {sigma_lower:e}",
            stack.sigma_y
        )));
    }
    Ok(stack.sigma_u / stack.sigma_y)
}

/// Windowed-integration regressor over a delay `window`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedRegressor {
    pub window: f64,
    hist: VecDeque<(f64, Vector2<f64>, Vector2<f64>)>,
    /// Cumulative trapezoid integral of Xi at each stored time.
    cum: VecDeque<Vector2<f64>>,
}

impl WindowedRegressor {
    pub fn new(window: f64) -> Result<Self> {
        if !(window > 0.0) {
            return Err(Error::InvalidArgument(format!("window must be positive, got {window}")));
        }
        Ok(Self { window, hist: VecDeque::new(), cum: VecDeque::new() })
    }

    pub fn reset(&mut self) {
        self.hist.clear();
        self.cum.clear();
    }

    /// Start of the current uninterrupted data window.
    pub fn t_a(&self) -> Option<f64> {
        self.hist.front().map(|h| h.0)
    }

    /// Adds `(psi, Xi)` at time `t`; returns `(Y, U)` once the window has positive length.
    pub fn push(&mut self, t: f64, psi: Vector2<f64>, xi: Vector2<f64>) -> Option<(Vector2<f64>, Vector2<f64>)> {
        let c = match (self.hist.back(), self.cum.back()) {
            (Some(&(tp, _, xp)), Some(&cp)) => cp + (xp + xi) * (0.5 * (t - tp)),
            _ => Vector2::zeros(),
        };
        self.hist.push_back((t, psi, xi));
        self.cum.push_back(c);
        let tol = 1e-9 * self.window.max(1.0);
        // Keep the newest sample at or before t - window as the left endpoint.
        while self.hist.len() >= 2 && self.hist[1].0 <= t - self.window + tol {
            self.hist.pop_front();
            self.cum.pop_front();
        }
        if self.hist.len() < 2 {
            return None;
        }
        let (_, psi0, _) = self.hist[0];
        let y = psi - psi0;
        let u = c - self.cum[0];
        Some((y, u))
    }
}

/// Exponential-filter regressor with forgetting factor `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredRegressor {
    pub lambda: f64,
    t_a: Option<f64>,
    psi_a: Vector2<f64>,
    f_psi: Vector2<f64>,
    f_xi: Vector2<f64>,
    last: Option<(f64, Vector2<f64>, Vector2<f64>)>,
}

impl FilteredRegressor {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument(format!("forgetting factor must be positive, got {lambda}")));
        }
        Ok(Self {
            lambda,
            t_a: None,
            psi_a: Vector2::zeros(),
            f_psi: Vector2::zeros(),
            f_xi: Vector2::zeros(),
            last: None,
        })
    }

    pub fn reset(&mut self) {
        self.t_a = None;
        self.f_psi = Vector2::zeros();
        self.f_xi = Vector2::zeros();
        self.last = None;
    }

    pub fn t_a(&self) -> Option<f64> {
        self.t_a
    }

    /// Weights of the exact one-step convolution for an input linear over the step.
    pub fn step_weights(lambda: f64, h: f64) -> (f64, f64, f64) {
        let a = lambda * h;
        let decay = (-a).exp();
        if a < 1e-6 {
            // Series limits avoid cancellation for tiny steps.
            let c1 = h * (0.5 - a / 6.0);
            let c0 = h * (1.0 - a / 2.0) - c1;
            return (decay, c0, c1);
        }
        let c1 = (a - 1.0 + decay) / (lambda * a);
        let c0 = (1.0 - decay) / lambda - c1;
        (decay, c0, c1)
    }

    pub fn push(&mut self, t: f64, psi: Vector2<f64>, xi: Vector2<f64>) -> Option<(Vector2<f64>, Vector2<f64>)> {
        let Some((tp, psi_p, xi_p)) = self.last else {
            self.t_a = Some(t);
            self.psi_a = psi;
            self.last = Some((t, psi, xi));
            return None;
        };
        let (decay, c0, c1) = Self::step_weights(self.lambda, t - tp);
        self.f_psi = self.f_psi * decay + psi_p * c0 + psi * c1;
        self.f_xi = self.f_xi * decay + xi_p * c0 + xi * c1;
        self.last = Some((t, psi, xi));
        let ta = self.t_a.unwrap_or(t);
        let psi_e = self.psi_a * (-self.lambda * (t - ta)).exp() + self.f_psi * self.lambda;
        Some((psi_e - psi, -self.f_xi))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Regressor {
    Windowed(WindowedRegressor),
    Filtered(FilteredRegressor),
}

impl Regressor {
    pub fn new(kind: RegressorKind, window: f64, lambda: f64) -> Result<Self> {
        Ok(match kind {
            RegressorKind::Windowed => Self::Windowed(WindowedRegressor::new(window)?),
            RegressorKind::Filtered => Self::Filtered(FilteredRegressor::new(lambda)?),
        })
    }

    pub fn reset(&mut self) {
        match self {
            Self::Windowed(w) => w.reset(),
            Self::Filtered(f) => f.reset(),
        }
    }

    pub fn push(&mut self, t: f64, psi: Vector2<f64>, xi: Vector2<f64>) -> Option<(Vector2<f64>, Vector2<f64>)> {
        match self {
            Self::Windowed(w) => w.push(t, psi, xi),
            Self::Filtered(f) => f.push(t, psi, xi),
        }
    }

    pub fn t_a(&self) -> Option<f64> {
        match self {
            Self::Windowed(w) => w.t_a(),
            Self::Filtered(f) => f.t_a(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObserverParams {
    pub k_theta: f64,
    pub lambda_a: f64,
    pub sigma_lower: f64,
    /// Seconds of stack data required before the rank check may activate a feature.
    pub rank_delay: f64,
    pub window: f64,
    pub forgetting: f64,
    pub regressor: RegressorKind,
    pub capacity: usize,
    pub r_lower: f64,
    pub bounds: ProjectionBox,
}

impl ObserverParams {
    /// Guaranteed decay rate of the error norm while active.
    pub fn beta(&self) -> f64 {
        self.k_theta * self.lambda_a
    }
}

/// Inputs that drive one active update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateInputs {
    pub y: Matrix3x2<f64>,
    pub u_kh: Vector3<f64>,
    pub r_kh_star: f64,
    /// Trapezoid-averaged feedforward over the step.
    pub mu_bar: Vector3<f64>,
}

/// One step of the projected update law. `sigma = U` leaves the estimate untouched.
pub fn theta_update(
    theta: &ThetaEstimate,
    sigma: Sigma,
    inputs: &UpdateInputs,
    params: &ObserverParams,
    dt: f64,
) -> Result<ThetaEstimate> {
    if sigma == Sigma::U {
        return Ok(*theta);
    }
    if !inputs.r_kh_star.is_finite() {
        return Err(Error::Numeric("non-finite r_kh from history stack".into()));
    }
    let th = theta.as_vector();
    let pred = th + inputs.mu_bar * dt;
    let y = &inputs.y;
    // SY^T (SU - SY theta) with SY = [[Y, 0], [0, 1]] and SU = [u_kh r*, r*].
    let top = inputs.u_kh * inputs.r_kh_star - y * Vector2::new(pred.x, pred.y);
    let yt = y.transpose() * top;
    let corr = Vector3::new(yt.x, yt.y, inputs.r_kh_star - pred.z) * params.k_theta;
    let rate = inputs.mu_bar + corr;
    let next = params.bounds.step(&th, &rate, dt);
    if !next.iter().all(|c| c.is_finite()) {
        return Err(Error::Numeric("non-finite estimate".into()));
    }
    Ok(ThetaEstimate::from_vector(&next))
}

/// Per-step measurement packet for one feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackMeasurement {
    pub t: f64,
    pub tracked: bool,
    pub u_bh: Vector3<f64>,
    /// Deputy position, used only to stamp key-frame ground truth and synthesize `u_bk`.
    pub p_bh: Vector3<f64>,
    pub v_bh: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrackReport {
    pub sigma_active: bool,
    pub lambda_min_y: f64,
    pub sigma_y: f64,
    pub cond: f64,
    pub keyed: bool,
    pub rekeyed: bool,
    pub sample_accepted: bool,
}

/// Observer record for one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTrack {
    pub id: usize,
    pub key: Option<KeyFrame>,
    pub theta: ThetaEstimate,
    pub stack: HistoryStack,
    pub regressor: Regressor,
    pub sigma: Sigma,
    pub t_star: Option<f64>,
    t_first_sample: Option<f64>,
    prev_mu: Option<Vector3<f64>>,
    bk_baseline_seen: bool,
}

impl FeatureTrack {
    pub fn new(id: usize, theta0: ThetaEstimate, params: &ObserverParams) -> Result<Self> {
        Ok(Self {
            id,
            key: None,
            theta: ThetaEstimate::from_vector(&params.bounds.clamp(&theta0.as_vector())),
            stack: HistoryStack::new(params.capacity)?,
            regressor: Regressor::new(params.regressor, params.window, params.forgetting)?,
            sigma: Sigma::U,
            t_star: None,
            t_first_sample: None,
            prev_mu: None,
            bk_baseline_seen: false,
        })
    }

    /// Drops stack contents and the regressor window; estimates are kept.
    pub fn purge(&mut self) {
        self.stack.purge();
        self.regressor.reset();
        self.t_first_sample = None;
        self.prev_mu = None;
    }

    fn interrupt(&mut self) {
        self.regressor.reset();
        self.prev_mu = None;
        self.sigma = Sigma::U;
    }

    /// Direction from the deputy back to the key-frame origin, if the baseline is nonzero.
    pub fn key_bearing(&self, p_bh: &Vector3<f64>) -> Option<(Vector3<f64>, f64)> {
        let key = self.key.as_ref()?;
        let d = key.p_key - p_bh;
        let r = d.norm();
        (r > 1e-9).then(|| (d / r, r))
    }

    fn stamp_key(&mut self, m: &TrackMeasurement, params: &ObserverParams) {
        self.key = Some(KeyFrame { t_key: m.t, u_kh: m.u_bh, p_key: m.p_bh });
        let th = Vector3::new(self.theta.r_bh_hat, params.r_lower, self.theta.r_bh_hat);
        self.theta = ThetaEstimate::from_vector(&params.bounds.clamp(&th));
        self.bk_baseline_seen = false;
        self.purge();
    }

    /// Processes the measurement at `m.t`, advancing the estimate over the preceding step.
    pub fn step(&mut self, m: &TrackMeasurement, params: &ObserverParams, dt: f64) -> Result<TrackReport> {
        let mut rep = TrackReport { cond: f64::INFINITY, ..Default::default() };
        if !m.tracked {
            self.interrupt();
            rep.sigma_y = self.stack.sigma_y;
            return Ok(rep);
        }
        if self.key.is_none() {
            self.key = Some(KeyFrame { t_key: m.t, u_kh: m.u_bh, p_key: m.p_bh });
            rep.keyed = true;
            self.interrupt();
            return Ok(rep);
        }
        if self.theta.r_bk_hat > 10.0 * params.r_lower {
            self.bk_baseline_seen = true;
        } else if self.bk_baseline_seen && self.theta.r_bk_hat <= 2.0 * params.r_lower {
            self.stamp_key(m, params);
            rep.rekeyed = true;
            self.interrupt();
            return Ok(rep);
        }
        let Some((u_bk, _)) = self.key_bearing(&m.p_bh) else {
            self.interrupt();
            return Ok(rep);
        };
        let key = self.key.expect("key frame present");
        let y = regressor_y(&m.u_bh, &u_bk);
        let g = y.transpose() * y;
        let (lmin, _) = sym2_eigenvalues(&g);
        rep.lambda_min_y = lmin;
        rep.cond = sym2_cond(&g);
        let Ok(ps) = psi(&y, &key.u_kh, params.lambda_a) else {
            self.interrupt();
            rep.sigma_y = self.stack.sigma_y;
            return Ok(rep);
        };
        let xi = range_rates(&m.u_bh, &u_bk, &m.v_bh);
        if let Some((ys, us)) = self.regressor.push(m.t, ps.psi, xi) {
            rep.sample_accepted = self.stack.insert(StackSample::new(ys, us, m.t));
            if self.t_first_sample.is_none() && !self.stack.is_empty() {
                self.t_first_sample = Some(m.t);
            }
        }
        rep.sigma_y = self.stack.sigma_y;
        let mu = Vector3::new(xi.x, xi.y, 0.0);
        let enough_time = self
            .t_first_sample
            .is_some_and(|t0| m.t - t0 >= params.rank_delay - 1e-9);
        let sigma = if enough_time && self.stack.sigma_y > params.sigma_lower {
            Sigma::A
        } else {
            Sigma::U
        };
        if sigma == Sigma::A {
            if self.t_star.is_none() {
                self.t_star = Some(m.t);
            }
            let r_star = solve_r_kh(&self.stack, params.sigma_lower)?;
            let mu_bar = self.prev_mu.map_or(mu, |p| (p + mu) * 0.5);
            let inputs = UpdateInputs { y, u_kh: key.u_kh, r_kh_star: r_star, mu_bar };
            self.theta = theta_update(&self.theta, Sigma::A, &inputs, params, dt)?;
        }
        self.sigma = sigma;
        self.prev_mu = Some(mu);
        rep.sigma_active = sigma == Sigma::A;
        Ok(rep)
    }
}
