//! Sequential feature scheduling: dwell-time admission, certified error bounds and the
//! daisy-chained deputy position estimate.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Timing marks and certified bounds for one tracking instance of a feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackTimeline {
    pub t_a: f64,
    pub t_d: Option<f64>,
    pub t_u: Option<f64>,
    /// Bound on the estimate error at acquisition.
    pub theta_bar_a: f64,
    pub theta_bar_u: Option<f64>,
    /// Accumulated time with `sigma = a`.
    pub active_duration: f64,
    /// Bound carried step by step: decays while active, grows by the truth drift while frozen.
    pub running_bound: f64,
}

impl TrackTimeline {
    pub fn new(t_a: f64, theta_bar_a: f64) -> Self {
        Self {
            t_a,
            t_d: None,
            t_u: None,
            theta_bar_a,
            theta_bar_u: None,
            active_duration: 0.0,
            running_bound: theta_bar_a,
        }
    }

    /// Advances the running bound over one step. `drift` bounds how far the true
    /// distances can move during a frozen step.
    pub fn record(&mut self, active: bool, dt: f64, beta: f64, drift: f64) {
        if active {
            self.active_duration += dt;
            self.running_bound *= (-beta * dt).exp();
        } else {
            self.running_bound += drift;
        }
    }

    pub fn mark_lost(&mut self, t: f64, beta: f64) {
        self.t_u = Some(t);
        self.theta_bar_u = Some(certify_loss_bound(self, beta));
    }

    /// Restarts the timeline after a key-frame refresh.
    pub fn restart(&mut self, t: f64, theta_bar_a: f64) {
        *self = Self::new(t, theta_bar_a);
    }
}

/// Active duration needed for a new link to certify `theta_bar_prev_u - delta`.
pub fn min_dwell(theta_bar_prev_u: f64, theta_bar_a: f64, delta: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!("decay rate must be positive, got {beta}")));
    }
    if !(theta_bar_prev_u > delta) {
        return Err(Error::DwellRejected { prev_bound: theta_bar_prev_u, delta });
    }
    if !(theta_bar_a > 0.0) {
        return Ok(0.0);
    }
    let ratio = (theta_bar_prev_u - delta) / theta_bar_a;
    if ratio >= 1.0 {
        return Ok(0.0);
    }
    Ok(-ratio.ln() / beta)
}

/// `theta_bar_a * exp(-beta * active_duration)`.
pub fn certify_loss_bound(timeline: &TrackTimeline, beta: f64) -> f64 {
    timeline.theta_bar_a * (-beta * timeline.active_duration).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub id: usize,
    pub tracked: bool,
    pub timeline: TrackTimeline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SwitchDecision {
    /// Active feature still supplies measurements.
    Keep,
    Switch { id: usize, bound: f64, required_dwell: f64, actual_dwell: f64 },
    Hold,
}

/// Picks the next chain link once the active feature has dropped out.
///
/// A candidate qualifies when its active time covers the dwell requirement and its running
/// bound sits at least `delta` under the previous link's bound. Smallest bound wins, ties
/// go to the smaller id.
pub fn switch_feature(
    active_tracked: bool,
    prev_bound: f64,
    candidates: &[Candidate],
    delta: f64,
    beta: f64,
) -> SwitchDecision {
    if active_tracked {
        return SwitchDecision::Keep;
    }
    let mut best: Option<(f64, usize, f64, f64)> = None;
    for c in candidates.iter().filter(|c| c.tracked) {
        let Ok(req) = min_dwell(prev_bound, c.timeline.theta_bar_a, delta, beta) else {
            continue;
        };
        let tl = &c.timeline;
        if tl.active_duration + 1e-9 < req || tl.running_bound > prev_bound - delta {
            continue;
        }
        let key = (tl.running_bound, c.id);
        if best.map_or(true, |(b, id, _, _)| key < (b, id)) {
            best = Some((tl.running_bound, c.id, req, tl.active_duration));
        }
    }
    match best {
        Some((bound, id, required_dwell, actual_dwell)) => {
            SwitchDecision::Switch { id, bound, required_dwell, actual_dwell }
        }
        None => SwitchDecision::Hold,
    }
}

/// Deputy position implied by a feature fix: `p_h - u_bh r_bh`.
pub fn deputy_from_feature(p_h: &Vector3<f64>, u_bh: &Vector3<f64>, r_bh_hat: f64) -> Vector3<f64> {
    p_h - u_bh * r_bh_hat
}

/// Goal relative to the deputy from a feature fix.
pub fn estimate_goal_relative(
    p_gh: &Vector3<f64>,
    p_h: &Vector3<f64>,
    u_bh: &Vector3<f64>,
    r_bh_hat: f64,
) -> Vector3<f64> {
    p_gh - deputy_from_feature(p_h, u_bh, r_bh_hat)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldMode {
    /// Frozen range against the live bearing of the held feature.
    LiveBearing,
    /// Frozen range and frozen bearing.
    FrozenBearing,
    /// Last fix propagated with the measured deputy velocity.
    DeadReckoning,
}

impl std::str::FromStr for HoldMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "live_bearing" => Ok(Self::LiveBearing),
            "frozen_bearing" => Ok(Self::FrozenBearing),
            "dead_reckoning" => Ok(Self::DeadReckoning),
            other => Err(Error::Config(format!("unknown hold mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub t: f64,
    pub old: Option<usize>,
    pub new: usize,
    /// Chain bound just before the switch.
    pub prev_bound: f64,
    pub bound: f64,
    pub required_dwell: f64,
    pub actual_dwell: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub active_feature: Option<usize>,
    pub holding: bool,
    /// Estimated deputy position in the Hill frame.
    pub p_b_hat: Vector3<f64>,
    /// Certified bound on `|p_b_hat - p_b|`.
    pub bound: f64,
    pub epsilon_target: f64,
    pub delta: f64,
    pub hold_mode: HoldMode,
    pub events: Vec<SwitchEvent>,
    frozen_r_bh: f64,
    frozen_u_bh: Vector3<f64>,
}

impl ChainState {
    pub fn new(p_b_hat: Vector3<f64>, bound: f64, epsilon_target: f64, delta: f64, hold_mode: HoldMode) -> Self {
        Self {
            active_feature: None,
            holding: false,
            p_b_hat,
            bound,
            epsilon_target,
            delta,
            hold_mode,
            events: Vec::new(),
            frozen_r_bh: 0.0,
            frozen_u_bh: Vector3::zeros(),
        }
    }

    /// `p_gh - p_b_hat`.
    pub fn p_gb_hat(&self, p_gh: &Vector3<f64>) -> Vector3<f64> {
        p_gh - self.p_b_hat
    }

    pub fn converged(&self) -> bool {
        self.bound <= self.epsilon_target
    }

    /// Makes `id` the active link.
    pub fn accept(&mut self, t: f64, id: usize, bound: f64, required_dwell: f64, actual_dwell: f64) {
        self.events.push(SwitchEvent {
            t,
            old: self.active_feature,
            new: id,
            prev_bound: self.bound,
            bound,
            required_dwell,
            actual_dwell,
        });
        self.active_feature = Some(id);
        self.holding = false;
        self.bound = bound;
    }

    /// Refreshes the estimate from the active feature's current fix.
    pub fn fix(&mut self, p_h: &Vector3<f64>, u_bh: &Vector3<f64>, r_bh_hat: f64, bound: f64) {
        self.p_b_hat = deputy_from_feature(p_h, u_bh, r_bh_hat);
        self.bound = bound;
        self.holding = false;
        self.frozen_r_bh = r_bh_hat;
        self.frozen_u_bh = *u_bh;
    }

    /// Propagates the held estimate over one step.
    ///
    /// `bearing` is the held feature's live bearing when it is still in view, `dp` the
    /// velocity-integrated displacement over the step and `speed_dt` the bound on true motion.
    pub fn hold_step(&mut self, p_h: &Vector3<f64>, bearing: Option<&Vector3<f64>>, dp: &Vector3<f64>, speed_dt: f64) {
        self.holding = true;
        match self.hold_mode {
            HoldMode::DeadReckoning => {
                self.p_b_hat += dp;
            }
            HoldMode::LiveBearing => {
                if let Some(u) = bearing {
                    self.frozen_u_bh = *u;
                    self.p_b_hat = deputy_from_feature(p_h, u, self.frozen_r_bh);
                }
                self.bound += speed_dt;
            }
            HoldMode::FrozenBearing => {
                self.bound += speed_dt;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cand(id: usize, bound: f64, active: f64) -> Candidate {
        let mut timeline = TrackTimeline::new(0.0, 4.0);
        timeline.active_duration = active;
        timeline.running_bound = bound;
        Candidate { id, tracked: true, timeline }
    }

    #[test]
    fn dwell_closed_form() {
        let d = min_dwell(2.0, 4.0, 0.1, 0.001).unwrap();
        assert_relative_eq!(d, -1000.0 * (1.9f64 / 4.0).ln(), epsilon = 1e-9);
        assert!((d - 744.4).abs() < 0.1);
        assert_eq!(min_dwell(2.0, 1.5, 0.1, 0.001).unwrap(), 0.0);
        assert!(matches!(min_dwell(0.1, 4.0, 0.1, 0.001), Err(Error::DwellRejected { .. })));
    }

    #[test]
    fn loss_bound_matches_dwell() {
        let mut tl = TrackTimeline::new(0.0, 4.0);
        assert_eq!(certify_loss_bound(&tl, 0.001), 4.0);
        tl.active_duration = -1000.0 * (1.9f64 / 4.0).ln();
        assert_relative_eq!(certify_loss_bound(&tl, 0.001), 1.9, epsilon = 1e-12);
    }

    #[test]
    fn selection_rule() {
        assert_eq!(switch_feature(true, 2.0, &[cand(3, 1.5, 1e4)], 0.1, 0.001), SwitchDecision::Keep);
        let d = switch_feature(false, 2.0, &[cand(3, 1.9, 1e4), cand(4, 1.5, 1e4)], 0.1, 0.001);
        assert!(matches!(d, SwitchDecision::Switch { id: 4, .. }));
        let d = switch_feature(false, 2.0, &[cand(9, 1.5, 1e4), cand(4, 1.5, 1e4)], 0.1, 0.001);
        assert!(matches!(d, SwitchDecision::Switch { id: 4, .. }));
        assert_eq!(switch_feature(false, 2.0, &[cand(3, 1.95, 1e4)], 0.1, 0.001), SwitchDecision::Hold);
        assert_eq!(switch_feature(false, 2.0, &[cand(3, 1.5, 10.0)], 0.1, 0.001), SwitchDecision::Hold);
        assert_eq!(switch_feature(false, 0.05, &[cand(3, 0.01, 1e4)], 0.1, 0.001), SwitchDecision::Hold);
    }

    #[test]
    fn goal_relative_identity() {
        let p_h = Vector3::new(10.0, 0.0, 0.0);
        let p_b = Vector3::new(40.0, 30.0, 0.0);
        let d = p_h - p_b;
        let u = d / d.norm();
        let g = Vector3::new(25.0, 0.0, 0.0);
        assert_relative_eq!(estimate_goal_relative(&g, &p_h, &u, d.norm()), g - p_b, epsilon = 1e-12);
        let err = estimate_goal_relative(&g, &p_h, &u, d.norm() + 0.7) - (g - p_b);
        assert_relative_eq!(err.norm(), 0.7, epsilon = 1e-12);
    }

    #[test]
    fn dead_reckoning_hold_keeps_error() {
        let mut c = ChainState::new(Vector3::new(1.0, 2.0, 3.0), 0.5, 0.1, 0.1, HoldMode::DeadReckoning);
        c.hold_step(&Vector3::zeros(), None, &Vector3::new(0.1, 0.0, 0.0), 0.1);
        assert_eq!(c.p_b_hat, Vector3::new(1.1, 2.0, 3.0));
        assert_eq!(c.bound, 0.5);
        assert!(c.holding);
    }
}
