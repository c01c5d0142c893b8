use std::fs;

use nalgebra::{Matrix6, Vector3};
use sha2::{Digest, Sha256};

use orbinspect::config::ScenarioConfig;
use orbinspect::control::effective_q;
use orbinspect::output::{read_csv, write_run, Manifest};
use orbinspect::plot::plot_dir;
use orbinspect::sim::{run_scenario, sweep_gamma_c, RunOutput};

fn short(duration: f64) -> ScenarioConfig {
    ScenarioConfig { duration, ..ScenarioConfig::default() }
}

fn run(duration: f64) -> RunOutput {
    run_scenario(&short(duration)).unwrap()
}

fn check_manifest(dir: &std::path::Path, m: &Manifest) {
    let on_disk: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(&on_disk, m);
    assert!(!m.files.is_empty());
    for (name, digest) in &m.files {
        let bytes = fs::read(dir.join(name)).unwrap();
        assert_eq!(&hex::encode(Sha256::digest(&bytes)), digest, "{name}");
    }
}

#[test]
fn defaults_match_reference_scenario() {
    let c = ScenarioConfig::default();
    assert_eq!((c.m, c.n, c.r_d, c.r_c, c.r_max, c.a_max), (12.0, 0.001027, 5.0, 10.0, 800.0, 0.1));
    assert_eq!((c.l_h, c.k_theta, c.stack_capacity, c.window), (0.01, 1.0, 100, 0.05));
    assert_eq!((c.rbh0, c.rbk0, c.rkh0, c.r_gh, c.delta), (40.0, 0.01, 40.0, 25.0, 0.1));
    assert_eq!(c.q_diag, [0.1, 0.1, 0.1, 10.0, 10.0, 10.0]);
    assert_eq!(c.qf_diag, [0.1, 0.1, 0.1, 10.0, 10.0, 10.0]);
    assert_eq!(c.r_diag, [0.1; 3]);
    assert_eq!((c.gamma_c, c.gamma_phi, c.d, c.v_init), (1.0, 0.1, 50.0, 0.3));
    assert_eq!((c.theta_a, c.theta_e, c.theta_s0), (std::f64::consts::PI, 0.0, 0.0));
    assert!((c.alpha_fov - std::f64::consts::FRAC_PI_3).abs() < 1e-15);
    assert_eq!((c.n_features, c.n_track), (99, 5));
    assert_eq!(c.r_min(), 15.0);
    assert!((c.initial_position().norm() - 50.0).abs() < 1e-12);
    assert!((c.initial_velocity().norm() - 0.3).abs() < 1e-12);
    c.validate().unwrap();
}

#[test]
fn config_round_trip_and_validation() {
    let c = ScenarioConfig { gamma_c: 7.5, seed: 42, ..ScenarioConfig::default() };
    let text = c.to_toml_string().unwrap();
    let back = ScenarioConfig::from_toml_str(&text).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.hash().unwrap(), c.hash().unwrap());
    assert_ne!(ScenarioConfig::default().hash().unwrap(), c.hash().unwrap());

    // Partial files fall back to defaults.
    let partial = ScenarioConfig::from_toml_str("duration = 12.0\nbarrier = false\n").unwrap();
    assert_eq!(partial.duration, 12.0);
    assert!(!partial.barrier);
    assert_eq!(partial.m, 12.0);

    for bad in [
        ScenarioConfig { dt: 0.0, ..ScenarioConfig::default() },
        ScenarioConfig { r_max: 10.0, ..ScenarioConfig::default() },
        ScenarioConfig { n_features: 0, ..ScenarioConfig::default() },
        ScenarioConfig { duration: -1.0, ..ScenarioConfig::default() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
    assert!(ScenarioConfig::from_toml_str("no_such_key = 1\n").is_err());
}

#[test]
fn zero_penalty_keeps_base_cost() {
    let c = ScenarioConfig::default();
    assert_eq!(effective_q(&c.q(), 0.0, &Vector3::new(0.2, -0.4, 0.9)), c.q());
    assert_eq!(c.q(), Matrix6::from_diagonal(&c.q_diag.into()));
}

#[test]
fn zero_duration_gives_empty_series_and_valid_manifest() {
    let out = run(0.0);
    assert_eq!(out.metrics.steps, 0);
    assert!(out.log.trajectory.is_empty() && out.log.controller.is_empty() && out.log.observer.is_empty());
    assert!(out.metrics.fault.is_none());
    let dir = tempfile::tempdir().unwrap();
    let m = write_run(&out, dir.path()).unwrap();
    check_manifest(dir.path(), &m);
    assert_eq!(read_csv(&dir.path().join("trajectory.csv")).unwrap().rows.len(), 0);
    let rep = plot_dir(dir.path(), dir.path()).unwrap();
    assert!(rep.written.is_empty());
    assert!(!rep.warnings.is_empty());
}

#[test]
fn short_run_invariants() {
    let out = run(300.0);
    let m = &out.metrics;
    let cfg = &out.config;
    assert!(m.fault.is_none(), "{:?}", m.fault);
    assert_eq!(m.steps, 6000);
    assert!(m.min_range > cfg.r_min() && m.max_range < cfg.r_max);

    let tr = &out.log.trajectory;
    assert_eq!(tr.len(), m.steps + 1);
    for w in tr.windows(2) {
        assert!((w[1].t - w[0].t - cfg.dt).abs() < 1e-9);
        assert!(w[1].inspected >= w[0].inspected);
    }
    for row in &out.log.controller {
        assert!(row.lambda >= 0.0);
        if row.lambda > 0.0 {
            assert!(row.c_after <= 1e-8, "t={} c_after={:e}", row.t, row.c_after);
        }
        assert!(row.range > cfg.r_min());
    }
    for g in &out.log.goals {
        let u = Vector3::from(g.u_gh);
        assert!((u.norm() - 1.0).abs() < 1e-12);
    }
    for s in out.log.switches.iter().filter(|s| s.old.is_some()) {
        assert!(s.bound <= s.prev_bound - cfg.delta + 1e-12);
    }
    let grid = (0..=30).map(|k| k as f64 * 10.0);
    let mut prev = 0;
    for t in grid {
        let n = m.inspected_at(t);
        assert!(n >= prev);
        prev = n;
    }
}

#[test]
fn observer_estimates_stay_in_box() {
    let out = run(200.0);
    let c = &out.config;
    for r in &out.log.observer {
        assert!(r.r_bh_hat >= c.r_min() - 1e-12 && r.r_bh_hat <= c.r_max + 1e-12);
        assert!(r.r_kh_hat >= c.r_min() - 1e-12 && r.r_kh_hat <= c.r_max + 1e-12);
        assert!(r.r_bk_hat >= c.r_lower - 1e-12 && r.r_bk_hat <= 2.0 * c.r_max + 1e-12);
    }
}

#[test]
fn artifacts_and_plots() {
    let out = run(200.0);
    let dir = tempfile::tempdir().unwrap();
    let m = write_run(&out, dir.path()).unwrap();
    check_manifest(dir.path(), &m);
    assert_eq!(m.config_hash, out.config.hash().unwrap());
    for name in ["trajectory.csv", "observer.csv", "controller.csv", "goals.csv", "switches.csv", "features.csv"] {
        let t = read_csv(&dir.path().join(name)).unwrap();
        assert!(t.schema.ends_with("v1"), "{name}: {}", t.schema);
    }
    let traj = read_csv(&dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(traj.rows.len(), out.log.trajectory.len());
    assert_eq!(traj.f64_column("t").unwrap()[1], out.config.dt);

    let rep = plot_dir(dir.path(), dir.path()).unwrap();
    assert_eq!(rep.written.len(), 7, "warnings: {:?}", rep.warnings);
    for p in &rep.written {
        assert!(fs::metadata(p).unwrap().len() > 0);
    }
    let svg = fs::read_to_string(dir.path().join("trajectory_xy.svg")).unwrap();
    assert!(svg.contains("<svg"));
}

#[test]
fn single_value_sweep_matches_run() {
    let base = short(150.0);
    let pts = sweep_gamma_c(&base, &[base.gamma_c]).unwrap();
    let out = run_scenario(&base).unwrap();
    assert_eq!(pts.len(), 1);
    assert_eq!(pts[0].median_cond, out.metrics.median_cond());
    assert_eq!(pts[0].samples, out.metrics.cond_samples.len());
    assert_eq!(pts[0].fault, out.metrics.fault);
    assert!(sweep_gamma_c(&base, &[]).is_err());
}
