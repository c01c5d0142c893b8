//! Closed-loop scenario: sense, observe, schedule, plan, control, integrate.

use std::collections::BTreeMap;

use nalgebra::{Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::control::{
    barrier_phi, constraint_h, control, epsilon_r, lagrange_multiplier, lqr_input, solve_riccati, RiccatiSolution,
    SafetyEnvelope,
};
use crate::error::{Error, Result};
use crate::frames::{step_rk4, sun_step, sun_unit_vector, HillState, PlantMatrices, SunState};
use crate::observer::{
    FeatureTrack, ObserverParams, ProjectionBox, Sigma, ThetaEstimate, TrackMeasurement,
};
use crate::planner::{next_goal, GoalSpec, PlanOutcome, PlannerConfig};
use crate::scene::{
    bearing_unit_vectors, compute_visibility, fibonacci_sphere, inspected_count, plane_normal, unproject,
    update_inspection, CameraModel, Feature, VisibilitySet,
};
use crate::scheduler::{switch_feature, min_dwell, Candidate, ChainState, SwitchDecision, SwitchEvent, TrackTimeline};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub p: [f64; 3],
    pub v: [f64; 3],
    pub p_b_hat: [f64; 3],
    pub p_gb_err: f64,
    pub chain_bound: f64,
    pub inspected: usize,
    pub active: Option<usize>,
    pub holding: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObserverRow {
    pub t: f64,
    pub id: usize,
    pub sigma: Sigma,
    pub r_bh: f64,
    pub r_bh_hat: f64,
    pub r_bk: f64,
    pub r_bk_hat: f64,
    pub r_kh: f64,
    pub r_kh_hat: f64,
    /// Scalar stack sum, which is also its only eigenvalue.
    pub sigma_y: f64,
    /// Condition number of the normalized stacked regressor; `NaN` while inactive.
    pub cond: f64,
    pub lambda_min_y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerRow {
    pub t: f64,
    pub u: [f64; 3],
    pub lambda: f64,
    pub phi: f64,
    pub h: f64,
    pub h_r: f64,
    pub range: f64,
    pub xpx: f64,
    /// Barrier constraint value after the correction; `NaN` when the barrier is off.
    pub c_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalRow {
    pub t: f64,
    pub u_gh: [f64; 3],
    pub cluster_sizes: Vec<usize>,
    pub inspected: usize,
    pub status: String,
    pub epsilon_r: f64,
}

/// One contiguous `sigma = a` interval of a feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActiveWindow {
    pub id: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub err_start: [f64; 3],
    pub err_end: [f64; 3],
    pub truth_end: [f64; 3],
}

impl ActiveWindow {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn err_norm_start(&self) -> f64 {
        Vector3::from(self.err_start).norm()
    }

    pub fn err_norm_end(&self) -> f64 {
        Vector3::from(self.err_end).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub t_start: f64,
    pub t_end: f64,
    pub p_gb_err_end: f64,
    pub min_p_gb_err: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub trajectory: Vec<TrajectoryRow>,
    pub observer: Vec<ObserverRow>,
    pub controller: Vec<ControllerRow>,
    pub goals: Vec<GoalRow>,
    pub switches: Vec<SwitchEvent>,
    pub features: Vec<Feature>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub steps: usize,
    pub t_end: f64,
    pub min_range: f64,
    pub max_range: f64,
    pub inspected_final: usize,
    /// `(t, count)` each time the inspected count changes.
    pub inspection_events: Vec<(f64, usize)>,
    /// Per-step condition numbers while a feature is active.
    pub cond_samples: Vec<f64>,
    pub windows: Vec<ActiveWindow>,
    pub segments: Vec<SegmentRecord>,
    pub sqrt_clamps: usize,
    pub max_c_after: f64,
    pub min_lambda: f64,
    pub fault: Option<String>,
}

impl RunMetrics {
    pub fn inspected_at(&self, t: f64) -> usize {
        self.inspection_events
            .iter()
            .take_while(|(te, _)| *te <= t + 1e-9)
            .last()
            .map_or(0, |(_, c)| *c)
    }

    pub fn median_cond(&self) -> Option<f64> {
        median(&self.cond_samples)
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub config: ScenarioConfig,
    pub metrics: RunMetrics,
    pub log: RunLog,
}

struct Slot {
    track: FeatureTrack,
    timeline: TrackTimeline,
    tracked: bool,
    window: Option<ActiveWindow>,
    last_err: Option<[f64; 3]>,
}

struct Segment {
    goal: GoalSpec,
    riccati: RiccatiSolution,
    env: SafetyEnvelope,
    h0: f64,
    deferred: f64,
    min_err: f64,
}

struct Sim {
    cfg: ScenarioConfig,
    plant: PlantMatrices,
    cam: CameraModel,
    params: ObserverParams,
    planner: PlannerConfig,
    deputy: HillState,
    sun: SunState,
    features: Vec<Feature>,
    vis: VisibilitySet,
    slots: BTreeMap<usize, Slot>,
    chain: ChainState,
    seg: Segment,
    n_c: Vector3<f64>,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    diameter: f64,
    log: RunLog,
    metrics: RunMetrics,
}

fn arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Feature ids are 1-based and contiguous.
fn feature_index(id: usize) -> usize {
    id - 1
}

impl Sim {
    fn new(cfg: ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let plant = PlantMatrices::new(cfg.m, cfg.n)?;
        let cam = CameraModel::new(cfg.intrinsic_matrix(), cfg.alpha_fov, cfg.r_max)?;
        let bounds = ProjectionBox::new(cfg.r_min(), cfg.r_max, cfg.r_lower, cfg.projection_layer)?;
        let params = ObserverParams {
            k_theta: cfg.k_theta,
            lambda_a: cfg.lambda_a,
            sigma_lower: cfg.sigma_lower,
            rank_delay: cfg.rank_delay,
            window: cfg.window,
            forgetting: cfg.forgetting,
            regressor: cfg.regressor,
            capacity: cfg.stack_capacity,
            r_lower: cfg.r_lower,
            bounds,
        };
        let planner = PlannerConfig {
            k: cfg.k_clusters,
            r_gh: cfg.r_gh,
            segment_length: cfg.segment_length,
            seed: cfg.seed,
            max_iter: cfg.kmeans_max_iter,
        };
        let deputy = HillState::new(cfg.initial_position(), cfg.initial_velocity(), 0.0);
        let sun = SunState::new(cfg.theta_s0, cfg.n);
        let mut features = fibonacci_sphere(cfg.n_features, cfg.r_c)?;
        let vis = compute_visibility(&features, &deputy, &sun_unit_vector(&sun), &cam, cfg.r_min(), cfg.n_track)?;
        // The first goal comes from the scene as seen before anything is marked inspected.
        let goal = match next_goal(&features, &sun_unit_vector(&sun), &deputy, &planner, 0.0)? {
            PlanOutcome::Goal { goal, .. } => goal,
            PlanOutcome::AwaitingIllumination => GoalSpec::new(deputy.p_bh, cfg.r_gh, 0.0, cfg.segment_length)?,
        };
        let fresh = update_inspection(&mut features, &vis, 0.0);
        let noise = if cfg.bearing_noise > 0.0 {
            Some(Normal::new(0.0, cfg.bearing_noise).map_err(|e| Error::Config(e.to_string()))?)
        } else {
            None
        };
        let diameter = bounds.diameter();
        let chain = ChainState::new(deputy.p_bh, diameter, cfg.epsilon_target, cfg.delta, cfg.hold_mode);
        let placeholder = Segment {
            goal,
            riccati: RiccatiSolution {
                t0: 0.0,
                tf: 1.0,
                h: 1.0,
                p: Vec::new(),
                q_bar: cfg.q(),
                q_f: cfg.q_f(),
                r: cfg.r(),
                gamma_c: cfg.gamma_c,
                p_lower: 0.0,
                p_upper: 0.0,
            },
            env: SafetyEnvelope {
                r_min: cfg.r_min(),
                r_max: cfg.r_max,
                a_max: cfg.a_max,
                gamma_phi: cfg.gamma_phi,
                l_h: cfg.l_h,
                epsilon_r: 0.0,
                beta: cfg.beta(),
                alpha_gain: cfg.alpha_gain,
                offset_cap: f64::INFINITY,
            },
            h0: 1.0,
            deferred: 0.0,
            min_err: f64::INFINITY,
        };
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut sim = Self {
            plant,
            cam,
            params,
            planner,
            deputy,
            sun,
            features,
            vis,
            slots: BTreeMap::new(),
            chain,
            seg: placeholder,
            n_c: Vector3::zeros(),
            rng,
            noise,
            diameter,
            log: RunLog::default(),
            metrics: RunMetrics {
                min_range: f64::INFINITY,
                max_range: 0.0,
                min_lambda: 0.0,
                max_c_after: f64::NEG_INFINITY,
                ..Default::default()
            },
            cfg,
        };
        sim.note_range();
        if fresh > 0 {
            sim.metrics.inspection_events.push((0.0, inspected_count(&sim.features)));
        }
        sim.observe(0.0, &Vector3::zeros())?;
        if let Some(&first) = sim.vis.tracked.first() {
            sim.chain.accept(0.0, first, diameter, 0.0, 0.0);
            sim.refresh_chain(0.0, &Vector3::zeros(), 0.0)?;
        }
        sim.start_segment(0.0, goal, Vec::new(), "initial")?;
        Ok(sim)
    }

    fn note_range(&mut self) {
        let r = self.deputy.range();
        self.metrics.min_range = self.metrics.min_range.min(r);
        self.metrics.max_range = self.metrics.max_range.max(r);
    }

    fn feature(&self, id: usize) -> &Feature {
        &self.features[feature_index(id)]
    }

    /// Camera bearing toward a feature, including the pixel round trip and optional jitter.
    fn measure_bearing(&mut self, id: usize) -> Result<Vector3<f64>> {
        let f = &self.features[feature_index(id)];
        let (_, pixels) = bearing_unit_vectors(f, &self.deputy, &self.cam)?;
        let u = unproject(&pixels, &self.cam)?;
        Ok(match self.noise {
            Some(nd) => {
                let j = Vector3::new(nd.sample(&mut self.rng), nd.sample(&mut self.rng), nd.sample(&mut self.rng));
                (u + j).normalize()
            }
            None => u,
        })
    }

    fn true_bearing(&self, id: usize) -> Vector3<f64> {
        (self.feature(id).p_h - self.deputy.p_bh).normalize()
    }

    /// Ground-truth `(r_bh, r_bk, r_kh)` for a keyed track.
    fn truth(&self, slot: &Slot) -> Option<Vector3<f64>> {
        let key = slot.track.key.as_ref()?;
        let p_h = self.feature(slot.track.id).p_h;
        let p = self.deputy.p_bh;
        Some(Vector3::new((p_h - p).norm(), (key.p_key - p).norm(), (p_h - key.p_key).norm()))
    }

    /// Estimate and bound used to seed a feature that joins the tracked set.
    fn handoff_seed(&self, id: usize) -> (ThetaEstimate, f64) {
        let r = (self.feature(id).p_h - self.chain.p_b_hat).norm();
        let e = self.chain.bound;
        let bound = (2.0 * e * e + self.cfg.r_lower * self.cfg.r_lower).sqrt().min(self.diameter);
        (ThetaEstimate::new(r, self.cfg.r_lower, r), bound)
    }

    /// Observer update for every known track at time `t`.
    fn observe(&mut self, t: f64, v_prev: &Vector3<f64>) -> Result<()> {
        let dt = self.cfg.dt;
        let beta = self.cfg.beta();
        let speed = v_prev.norm().max(self.deputy.v_bh.norm());
        let drift = std::f64::consts::SQRT_2 * speed * dt;
        let tracked = self.vis.tracked.clone();
        for id in &tracked {
            let seed = if t == 0.0 {
                (ThetaEstimate::new(self.cfg.rbh0, self.cfg.rbk0, self.cfg.rkh0), self.diameter)
            } else {
                self.handoff_seed(*id)
            };
            let fresh = match self.slots.get(id) {
                None => true,
                Some(s) => !s.tracked && s.timeline.running_bound > seed.1,
            };
            if fresh {
                let track = FeatureTrack::new(*id, seed.0, &self.params)?;
                self.slots.insert(
                    *id,
                    Slot { track, timeline: TrackTimeline::new(t, seed.1), tracked: true, window: None, last_err: None },
                );
            }
        }
        let ids: Vec<usize> = self.slots.keys().copied().collect();
        for id in ids {
            let is_tracked = self.vis.is_tracked(id);
            let u_bh = if is_tracked { self.measure_bearing(id)? } else { Vector3::zeros() };
            let m = TrackMeasurement { t, tracked: is_tracked, u_bh, p_bh: self.deputy.p_bh, v_bh: self.deputy.v_bh };
            let mut slot = self.slots.remove(&id).expect("slot present");
            let was_tracked = slot.tracked;
            let rep = slot.track.step(&m, &self.params, dt)?;
            if rep.rekeyed {
                let b = slot.timeline.running_bound;
                let rb = (2.0 * b * b + self.cfg.r_lower * self.cfg.r_lower).sqrt().min(self.diameter);
                slot.timeline.restart(t, rb);
            } else if t > 0.0 {
                slot.timeline.record(rep.sigma_active, dt, beta, if rep.sigma_active { 0.0 } else { drift });
            }
            slot.tracked = is_tracked;
            if was_tracked && !is_tracked {
                slot.timeline.mark_lost(t, beta);
            }
            let truth = self.truth(&slot);
            let err = truth.map(|tr| arr(&(slot.track.theta.as_vector() - tr)));
            if rep.sigma_active {
                let cond = slot.track.stack.regressor_cond();
                self.metrics.cond_samples.push(cond);
                let (Some(tr), Some(e)) = (truth, err) else { unreachable!("active track has a key") };
                let w = slot.window.get_or_insert(ActiveWindow {
                    id,
                    t_start: t - dt,
                    t_end: t,
                    err_start: slot.last_err.unwrap_or(e),
                    err_end: e,
                    truth_end: arr(&tr),
                });
                w.t_end = t;
                w.err_end = e;
                w.truth_end = arr(&tr);
            } else if let Some(w) = slot.window.take() {
                self.metrics.windows.push(w);
            }
            slot.last_err = err;
            if is_tracked {
                if let Some(tr) = truth {
                    let th = slot.track.theta;
                    self.log.observer.push(ObserverRow {
                        t,
                        id,
                        sigma: slot.track.sigma,
                        r_bh: tr.x,
                        r_bh_hat: th.r_bh_hat,
                        r_bk: tr.y,
                        r_bk_hat: th.r_bk_hat,
                        r_kh: tr.z,
                        r_kh_hat: th.r_kh_hat,
                        sigma_y: slot.track.stack.sigma_y,
                        cond: if rep.sigma_active { slot.track.stack.regressor_cond() } else { f64::NAN },
                        lambda_min_y: rep.lambda_min_y,
                    });
                }
            }
            self.slots.insert(id, slot);
        }
        Ok(())
    }

    /// Updates the chain estimate after the observer step.
    fn refresh_chain(&mut self, t: f64, dp: &Vector3<f64>, speed_dt: f64) -> Result<()> {
        let active = self.chain.active_feature;
        if let Some(a) = active {
            let slot = &self.slots[&a];
            let usable = slot.tracked && !(self.chain.holding && slot.timeline.running_bound > self.chain.bound);
            if usable {
                let u = self.true_bearing(a);
                let (r, b) = (slot.track.theta.r_bh_hat, slot.timeline.running_bound);
                let p_h = self.feature(a).p_h;
                self.chain.fix(&p_h, &u, r, b);
                return Ok(());
            }
        }
        let candidates: Vec<Candidate> = self
            .slots
            .values()
            .filter(|s| Some(s.track.id) != active)
            .map(|s| Candidate { id: s.track.id, tracked: s.tracked, timeline: s.timeline })
            .collect();
        match switch_feature(false, self.chain.bound, &candidates, self.cfg.delta, self.cfg.beta()) {
            SwitchDecision::Switch { id, bound, required_dwell, actual_dwell } => {
                self.chain.accept(t, id, bound, required_dwell, actual_dwell);
                let slot = self.slots.get_mut(&id).expect("candidate slot");
                slot.timeline.t_d.get_or_insert(t);
                let r = slot.track.theta.r_bh_hat;
                let u = self.true_bearing(id);
                let p_h = self.feature(id).p_h;
                self.chain.fix(&p_h, &u, r, bound);
            }
            SwitchDecision::Hold | SwitchDecision::Keep => {
                let Some(a) = active else { return Ok(()) };
                let p_h = self.feature(a).p_h;
                let bearing = self.vis.is_visible(a).then(|| self.true_bearing(a));
                self.chain.hold_step(&p_h, bearing.as_ref(), dp, speed_dt);
            }
        }
        Ok(())
    }

    fn start_segment(&mut self, t: f64, goal: GoalSpec, cluster_sizes: Vec<usize>, status: &str) -> Result<()> {
        let cfg = &self.cfg;
        let pts: Vec<Vector3<f64>> = self.vis.tracked.iter().map(|id| self.feature(*id).p_h).collect();
        match plane_normal(&pts, &self.chain.p_b_hat) {
            Ok(n) => self.n_c = n,
            Err(_) if self.n_c == Vector3::zeros() => self.n_c = self.chain.p_b_hat.normalize(),
            Err(_) => {}
        }
        let t_f = t + cfg.segment_length;
        let steps = ((cfg.segment_length / cfg.dt).round() as usize).max(1) * cfg.riccati_substeps;
        let riccati = solve_riccati(&cfg.q(), &cfg.r(), &cfg.q_f(), cfg.gamma_c, &self.n_c, &self.plant, t, t_f, steps)?;
        let mut env = self.seg.env;
        let h0 = constraint_h(&goal.p_gh, &Vector3::zeros(), &env)?.h;
        env.epsilon_r = match self.chain.active_feature {
            Some(a) => epsilon_r(&self.feature(a).p_h, &self.true_bearing(a), &self.chain.p_b_hat, cfg.r_min(), cfg.r_max),
            None => 0.0,
        };
        env.offset_cap = cfg.robust_cap_frac * h0;
        env.validate()?;
        let goal = GoalSpec { t_seg_start: t, t_f, ..goal };
        for slot in self.slots.values_mut() {
            slot.track.purge();
        }
        self.log.goals.push(GoalRow {
            t,
            u_gh: arr(&goal.u_gh),
            cluster_sizes,
            inspected: inspected_count(&self.features),
            status: status.to_string(),
            epsilon_r: env.epsilon_r,
        });
        self.seg = Segment { goal, riccati, env, h0, deferred: 0.0, min_err: f64::INFINITY };
        Ok(())
    }

    fn p_gb_err(&self) -> f64 {
        (self.chain.p_b_hat - self.deputy.p_bh).norm()
    }

    fn log_trajectory(&mut self, t: f64) {
        let d = &self.deputy;
        self.log.trajectory.push(TrajectoryRow {
            t,
            p: arr(&d.p_bh),
            v: arr(&d.v_bh),
            p_b_hat: arr(&self.chain.p_b_hat),
            p_gb_err: self.p_gb_err(),
            chain_bound: self.chain.bound,
            inspected: inspected_count(&self.features),
            active: self.chain.active_feature,
            holding: self.chain.holding,
        });
    }

    /// Thrust for the current estimate, with controller diagnostics.
    fn command(&mut self, t: f64) -> Result<Vector3<f64>> {
        let p_g = self.seg.goal.p_gh;
        let v = self.deputy.v_bh;
        let xp = self.chain.p_b_hat - p_g;
        let x_hat = Vector6::new(xp.x, xp.y, xp.z, v.x, v.y, v.z);
        let p = self.seg.riccati.at(t);
        let r = self.cfg.r();
        let u_lqr = lqr_input(&x_hat, &p, &r, &self.plant)?;
        let tau = t - self.seg.goal.t_seg_start;
        let barrier = barrier_phi(&x_hat, tau, &p_g, &self.seg.env, self.seg.h0);
        let (u, lambda, phi, h, h_r, c_after) = if self.cfg.barrier {
            let be = barrier?;
            if be.clamped {
                self.metrics.sqrt_clamps += 1;
            }
            let m = lagrange_multiplier(&x_hat, &u_lqr, &be, &self.plant, &r, &self.seg.env)?;
            let u = control(&x_hat, &p, m.lambda, &be.grad_x, &r, &self.plant)?;
            (u, m.lambda, be.phi, be.h, be.h_r, m.c_corrected)
        } else {
            match barrier {
                Ok(be) => (u_lqr, 0.0, be.phi, be.h, be.h_r, f64::NAN),
                Err(_) => {
                    let h = constraint_h(&self.chain.p_b_hat, &v, &self.seg.env).map_or(f64::NAN, |e| e.h);
                    (u_lqr, 0.0, f64::NAN, h, f64::NAN, f64::NAN)
                }
            }
        };
        if lambda > 0.0 {
            self.metrics.max_c_after = self.metrics.max_c_after.max(c_after);
        }
        self.metrics.min_lambda = self.metrics.min_lambda.min(lambda);
        let xt = self.deputy.p_bh - p_g;
        let x_true = Vector6::new(xt.x, xt.y, xt.z, v.x, v.y, v.z);
        self.log.controller.push(ControllerRow {
            t,
            u: arr(&u),
            lambda,
            phi,
            h,
            h_r,
            range: self.deputy.range(),
            xpx: x_true.dot(&(p * x_true)),
            c_after,
        });
        Ok(u)
    }

    /// Whether a goal switch should wait for a dwell requirement that is still running.
    fn dwell_pending(&self) -> bool {
        if !self.chain.holding {
            return false;
        }
        self.slots.values().any(|s| {
            s.tracked
                && Some(s.track.id) != self.chain.active_feature
                && min_dwell(self.chain.bound, s.timeline.theta_bar_a, self.cfg.delta, self.cfg.beta())
                    .is_ok_and(|req| s.timeline.active_duration < req)
        })
    }

    fn end_segment(&mut self, t: f64) -> Result<()> {
        self.metrics.segments.push(SegmentRecord {
            t_start: self.seg.goal.t_seg_start,
            t_end: t,
            p_gb_err_end: self.p_gb_err(),
            min_p_gb_err: self.seg.min_err,
        });
        let sun = sun_unit_vector(&self.sun);
        match next_goal(&self.features, &sun, &self.deputy, &self.planner, t)? {
            PlanOutcome::Goal { goal, cluster_sizes } => self.start_segment(t, goal, cluster_sizes, "new_goal"),
            PlanOutcome::AwaitingIllumination => {
                let goal = self.seg.goal;
                self.start_segment(t, goal, Vec::new(), "awaiting_illumination")
            }
        }
    }

    /// Advances one step from `t` to `t + dt`.
    fn step(&mut self, k: usize) -> Result<()> {
        let dt = self.cfg.dt;
        let t = k as f64 * dt;
        let t_next = (k + 1) as f64 * dt;
        let u = self.command(t)?;
        let v_prev = self.deputy.v_bh;
        let mut next = step_rk4(&self.deputy, &u, dt, &self.plant)?;
        next.t = t_next;
        self.deputy = next;
        self.sun = sun_step(&self.sun, dt)?;
        self.note_range();
        let r = self.deputy.range();
        if r <= self.cfg.r_min() || r >= self.cfg.r_max {
            return Err(Error::SafetyFault { t: t_next, reason: format!("deputy range {r} m left the safe annulus") });
        }
        self.vis = compute_visibility(
            &self.features,
            &self.deputy,
            &sun_unit_vector(&self.sun),
            &self.cam,
            self.cfg.r_min(),
            self.cfg.n_track,
        )?;
        if update_inspection(&mut self.features, &self.vis, t_next) > 0 {
            self.metrics.inspection_events.push((t_next, inspected_count(&self.features)));
        }
        self.observe(t_next, &v_prev)?;
        let dp = (v_prev + self.deputy.v_bh) * (0.5 * dt);
        let speed_dt = v_prev.norm().max(self.deputy.v_bh.norm()) * dt;
        self.refresh_chain(t_next, &dp, speed_dt)?;
        self.seg.min_err = self.seg.min_err.min(self.p_gb_err());
        self.log_trajectory(t_next);
        if t_next >= self.seg.goal.t_f - 1e-9 {
            if self.dwell_pending() && self.seg.deferred < self.cfg.segment_length {
                self.seg.deferred += dt;
            } else {
                self.end_segment(t_next)?;
            }
        }
        Ok(())
    }
}

/// Runs one scenario. Faults stop the run and are reported in the metrics; only invalid
/// configurations return an error.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput> {
    let mut sim = Sim::new(cfg.clone())?;
    let steps = (cfg.duration / cfg.dt).round() as usize;
    if steps > 0 {
        sim.log_trajectory(0.0);
    }
    let n = sim.features.len();
    let mut done = 0;
    for k in 0..steps {
        if cfg.stop_on_full_inspection && inspected_count(&sim.features) == n {
            break;
        }
        if let Err(e) = sim.step(k) {
            sim.metrics.fault = Some(e.to_string());
            done = k + 1;
            break;
        }
        done = k + 1;
    }
    for slot in sim.slots.values_mut() {
        if let Some(w) = slot.window.take() {
            sim.metrics.windows.push(w);
        }
    }
    sim.metrics.steps = done;
    sim.metrics.t_end = done as f64 * cfg.dt;
    sim.metrics.inspected_final = inspected_count(&sim.features);
    if sim.metrics.max_c_after == f64::NEG_INFINITY {
        sim.metrics.max_c_after = 0.0;
    }
    let mut log = sim.log;
    if steps == 0 {
        // Time series only start with the first step; the initial sensing pass is not logged.
        log.observer.clear();
    }
    log.switches = sim.chain.events.clone();
    log.features = sim.features;
    Ok(RunOutput { config: sim.cfg, metrics: sim.metrics, log })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub gamma_c: f64,
    pub median_cond: Option<f64>,
    pub samples: usize,
    pub fault: Option<String>,
}

/// One run per `gamma_c` value, in parallel.
pub fn sweep_gamma_c(base: &ScenarioConfig, values: &[f64]) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one value".into()));
    }
    values
        .par_iter()
        .map(|&g| {
            let cfg = ScenarioConfig { gamma_c: g, ..base.clone() };
            match run_scenario(&cfg) {
                Ok(out) => Ok(SweepPoint {
                    gamma_c: g,
                    median_cond: out.metrics.median_cond(),
                    samples: out.metrics.cond_samples.len(),
                    fault: out.metrics.fault,
                }),
                Err(e) => Ok(SweepPoint { gamma_c: g, median_cond: None, samples: 0, fault: Some(e.to_string()) }),
            }
        })
        .collect()
}
