//! Scenario configuration: a flat TOML table where every key is optional.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::observer::RegressorKind;
use crate::scheduler::HoldMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    // Physics.
    pub m: f64,
    pub n: f64,
    pub r_d: f64,
    pub r_c: f64,
    pub r_max: f64,
    pub a_max: f64,
    pub v_init: f64,
    /// Initial deputy range from the chief center.
    pub d: f64,
    /// Initial azimuth and elevation of the deputy.
    pub theta_a: f64,
    pub theta_e: f64,
    pub theta_s0: f64,

    // Scene and camera.
    pub n_features: usize,
    pub n_track: usize,
    pub alpha_fov: f64,
    /// Row-major camera intrinsic; identity when absent.
    pub intrinsic: Option<[f64; 9]>,
    /// Standard deviation of additive bearing jitter before renormalization.
    pub bearing_noise: f64,

    // Observer.
    pub k_theta: f64,
    pub stack_capacity: usize,
    pub window: f64,
    pub forgetting: f64,
    pub lambda_a: f64,
    pub sigma_lower: f64,
    pub rank_delay: f64,
    pub r_lower: f64,
    pub rbh0: f64,
    pub rbk0: f64,
    pub rkh0: f64,
    pub regressor: RegressorKind,
    pub projection_layer: f64,

    // Controller.
    pub q_diag: [f64; 6],
    pub r_diag: [f64; 3],
    pub qf_diag: [f64; 6],
    pub gamma_c: f64,
    pub gamma_phi: f64,
    pub l_h: f64,
    pub alpha_gain: f64,
    /// Robustifying offset is capped at this fraction of the goal constraint value.
    pub robust_cap_frac: f64,
    pub riccati_substeps: usize,
    pub barrier: bool,

    // Planner and scheduler.
    pub k_clusters: usize,
    pub kmeans_max_iter: usize,
    pub r_gh: f64,
    pub segment_length: f64,
    pub delta: f64,
    pub epsilon_target: f64,
    pub hold_mode: HoldMode,

    // Run control.
    pub dt: f64,
    pub duration: f64,
    pub seed: u64,
    pub stop_on_full_inspection: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            m: 12.0,
            n: 0.001027,
            r_d: 5.0,
            r_c: 10.0,
            r_max: 800.0,
            a_max: 0.1,
            v_init: 0.3,
            d: 50.0,
            theta_a: PI,
            theta_e: 0.0,
            theta_s0: 0.0,
            n_features: 99,
            n_track: 5,
            alpha_fov: PI / 3.0,
            intrinsic: None,
            bearing_noise: 0.0,
            k_theta: 1.0,
            stack_capacity: 100,
            window: 0.05,
            forgetting: 1.0,
            lambda_a: 0.1,
            sigma_lower: 1e-6,
            rank_delay: 0.25,
            r_lower: 0.01,
            rbh0: 40.0,
            rbk0: 0.01,
            rkh0: 40.0,
            regressor: RegressorKind::Windowed,
            projection_layer: 0.01,
            q_diag: [0.1, 0.1, 0.1, 10.0, 10.0, 10.0],
            r_diag: [0.1, 0.1, 0.1],
            qf_diag: [0.1, 0.1, 0.1, 10.0, 10.0, 10.0],
            gamma_c: 1.0,
            gamma_phi: 0.1,
            l_h: 0.01,
            alpha_gain: 1.0,
            robust_cap_frac: 0.5,
            riccati_substeps: 25,
            barrier: true,
            k_clusters: 2,
            kmeans_max_iter: 100,
            r_gh: 25.0,
            segment_length: 50.0,
            delta: 0.1,
            epsilon_target: 0.5,
            hold_mode: HoldMode::DeadReckoning,
            dt: 0.05,
            duration: 1000.0,
            seed: 0,
            stop_on_full_inspection: false,
        }
    }
}

fn require(ok: bool, msg: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg.into()))
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml_string()?.as_bytes())))
    }

    pub fn r_min(&self) -> f64 {
        self.r_d + self.r_c
    }

    pub fn beta(&self) -> f64 {
        self.k_theta * self.lambda_a
    }

    pub fn q(&self) -> Matrix6<f64> {
        Matrix6::from_diagonal(&Vector6::from_row_slice(&self.q_diag))
    }

    pub fn q_f(&self) -> Matrix6<f64> {
        Matrix6::from_diagonal(&Vector6::from_row_slice(&self.qf_diag))
    }

    pub fn r(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from_row_slice(&self.r_diag))
    }

    pub fn intrinsic_matrix(&self) -> Matrix3<f64> {
        self.intrinsic.map_or_else(Matrix3::identity, |a| Matrix3::from_row_slice(&a))
    }

    /// Initial deputy position from range, azimuth and elevation.
    pub fn initial_position(&self) -> Vector3<f64> {
        let (se, ce) = self.theta_e.sin_cos();
        let (sa, ca) = self.theta_a.sin_cos();
        Vector3::new(ce * ca, ce * sa, se) * self.d
    }

    /// Initial velocity along the initial line of sight from the chief.
    pub fn initial_velocity(&self) -> Vector3<f64> {
        let p = self.initial_position();
        p / p.norm() * self.v_init
    }

    pub fn validate(&self) -> Result<()> {
        let r_min = self.r_min();
        require(self.m > 0.0, "m must be positive")?;
        require(self.n >= 0.0 && self.n.is_finite(), "n must be non-negative")?;
        require(self.r_c > 0.0 && self.r_d >= 0.0, "r_c must be positive and r_d non-negative")?;
        require(r_min < self.r_max, "r_d + r_c must be below r_max")?;
        require(self.a_max > 0.0, "a_max must be positive")?;
        require(self.d > r_min && self.d < self.r_max, "initial range must lie inside the safe annulus")?;
        require(self.v_init >= 0.0, "v_init must be non-negative")?;
        require(self.n_features >= 1, "need at least one feature")?;
        require(self.n_track >= 1, "n_track must be at least 1")?;
        require(self.alpha_fov > 0.0 && self.alpha_fov < PI, "alpha_fov must be in (0, pi)")?;
        require(self.bearing_noise >= 0.0, "bearing_noise must be non-negative")?;
        require(self.k_theta > 0.0, "k_theta must be positive")?;
        require(self.stack_capacity >= 1, "stack_capacity must be positive")?;
        require(self.window > 0.0 && self.forgetting > 0.0, "window and forgetting must be positive")?;
        require(self.lambda_a > 0.0 && self.lambda_a < 1.0, "lambda_a must be in (0, 1)")?;
        require(self.sigma_lower > 0.0, "sigma_lower must be positive")?;
        require(self.rank_delay >= 0.0, "rank_delay must be non-negative")?;
        require(self.r_lower > 0.0, "r_lower must be positive")?;
        require(
            (r_min..=self.r_max).contains(&self.rbh0) && (r_min..=self.r_max).contains(&self.rkh0),
            "initial r_bh and r_kh estimates must lie in [r_min, r_max]",
        )?;
        require(self.rbk0 >= self.r_lower && self.rbk0 <= 2.0 * self.r_max, "rbk0 out of range")?;
        require((0.0..0.5).contains(&self.projection_layer), "projection_layer must be in [0, 0.5)")?;
        require(
            self.q_diag.iter().chain(&self.qf_diag).chain(&self.r_diag).all(|v| *v > 0.0),
            "penalty diagonals must be positive",
        )?;
        require(self.gamma_c >= 0.0, "gamma_c must be non-negative")?;
        require(self.gamma_phi > 0.0 && self.l_h > 0.0 && self.alpha_gain > 0.0, "barrier gains must be positive")?;
        require((0.0..1.0).contains(&self.robust_cap_frac), "robust_cap_frac must be in [0, 1)")?;
        require(self.riccati_substeps >= 1, "riccati_substeps must be at least 1")?;
        require(self.k_clusters >= 1 && self.kmeans_max_iter >= 1, "k-means knobs must be positive")?;
        require(self.r_gh > r_min && self.r_gh < self.r_max, "r_gh must lie inside the safe annulus")?;
        require(self.segment_length > 0.0, "segment_length must be positive")?;
        require(self.delta > 0.0 && self.epsilon_target > 0.0, "delta and epsilon_target must be positive")?;
        require(self.dt > 0.0 && self.dt.is_finite(), "dt must be positive")?;
        require(self.duration >= 0.0 && self.duration.is_finite(), "duration must be non-negative")?;
        if self.intrinsic.is_some() {
            let a = self.intrinsic_matrix();
            require(a.try_inverse().is_some(), "intrinsic must be invertible")?;
        }
        Ok(())
    }
}
