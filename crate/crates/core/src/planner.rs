//! k-means goal planner over uninspected, illuminated features.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::HillState;
use crate::scene::{illuminated, Feature};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub centroids: Vec<Vector3<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.len()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

fn nearest(p: &Vector3<f64>, centroids: &[Vector3<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = (p - c).norm_squared();
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Lloyd iteration from a seeded k-means++ start. `k` is reduced to the point count.
pub fn kmeans_cluster(points: &[Vector3<f64>], k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("k-means needs at least one point".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k-means needs k >= 1".into()));
    }
    let k = k.min(points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    while centroids.len() < k {
        let d2: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) {
            // Remaining points coincide with existing centroids.
            centroids.push(centroids[0]);
            continue;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = points.len() - 1;
        for (i, d) in d2.iter().enumerate() {
            if target < *d {
                pick = i;
                break;
            }
            target -= d;
        }
        centroids.push(points[pick]);
    }
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut sums = vec![Vector3::zeros(); k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            sums[a] += p;
            counts[a] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j] / counts[j] as f64;
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }
    let inertia = points
        .iter()
        .zip(&assignments)
        .map(|(p, &a)| (p - centroids[a]).norm_squared())
        .sum();
    Ok(KMeansResult { centroids, assignments, inertia, iterations })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub u_gh: Vector3<f64>,
    pub r_gh: f64,
    pub p_gh: Vector3<f64>,
    pub t_seg_start: f64,
    pub t_f: f64,
}

impl GoalSpec {
    pub fn new(u_gh: Vector3<f64>, r_gh: f64, t_seg_start: f64, t_f: f64) -> Result<Self> {
        let n = u_gh.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidArgument("goal direction must be nonzero".into()));
        }
        let u = u_gh / n;
        Ok(Self { u_gh: u, r_gh, p_gh: u * r_gh, t_seg_start, t_f })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub k: usize,
    pub r_gh: f64,
    pub segment_length: f64,
    pub seed: u64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanOutcome {
    Goal { goal: GoalSpec, cluster_sizes: Vec<usize> },
    /// Nothing uninspected is lit; keep the current goal.
    AwaitingIllumination,
}

/// Goal from the cluster centroid nearest the deputy.
pub fn next_goal(
    features: &[Feature],
    sun: &Vector3<f64>,
    deputy: &HillState,
    cfg: &PlannerConfig,
    t_now: f64,
) -> Result<PlanOutcome> {
    let pts: Vec<Vector3<f64>> = features
        .iter()
        .filter(|f| !f.inspected && illuminated(f, sun))
        .map(|f| f.p_h)
        .collect();
    if pts.is_empty() {
        return Ok(PlanOutcome::AwaitingIllumination);
    }
    let km = kmeans_cluster(&pts, cfg.k, cfg.seed, cfg.max_iter)?;
    let (best, _) = nearest(&deputy.p_bh, &km.centroids);
    let mut c = km.centroids[best];
    if !(c.norm() > 1e-9) {
        // Degenerate centroid at the chief center: fall back to the cluster's first member.
        let idx = km.assignments.iter().position(|&a| a == best).unwrap_or(0);
        c = pts[idx];
    }
    let goal = GoalSpec::new(c, cfg.r_gh, t_now, t_now + cfg.segment_length)?;
    Ok(PlanOutcome::Goal { goal, cluster_sizes: km.cluster_sizes() })
}
