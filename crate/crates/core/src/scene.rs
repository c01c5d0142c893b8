//! Chief surface features, illumination, field of view and synthesized camera measurements.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::HillState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    /// 1-based identifier.
    pub id: usize,
    /// Position relative to the chief center, m.
    pub p_h: Vector3<f64>,
    pub surface_normal: Vector3<f64>,
    pub inspected: bool,
    pub first_inspected_time: Option<f64>,
}

impl Feature {
    /// Feature on a spherical chief; the normal is radial.
    pub fn on_sphere(id: usize, p_h: Vector3<f64>) -> Result<Self> {
        let r = p_h.norm();
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::InvalidArgument(format!("feature {id} at degenerate position")));
        }
        Ok(Self { id, p_h, surface_normal: p_h / r, inspected: false, first_inspected_time: None })
    }
}

/// Fibonacci-sphere layout of `n` features on a sphere of radius `r_c`.
pub fn fibonacci_sphere(n: usize, r_c: f64) -> Result<Vec<Feature>> {
    if n == 0 {
        return Err(Error::InvalidArgument("feature count must be positive".into()));
    }
    if !(r_c > 0.0) {
        return Err(Error::InvalidArgument(format!("chief radius must be positive, got {r_c}")));
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            let u = Vector3::new(rho * phi.cos(), rho * phi.sin(), z).normalize();
            Feature::on_sphere(i + 1, u * r_c)
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VisibilitySet {
    pub in_fov: Vec<usize>,
    pub illuminated: Vec<usize>,
    /// Ids in selection order, at most `n_track` long.
    pub tracked: Vec<usize>,
}

impl VisibilitySet {
    pub fn is_visible(&self, id: usize) -> bool {
        self.in_fov.binary_search(&id).is_ok() && self.illuminated.binary_search(&id).is_ok()
    }

    pub fn is_tracked(&self, id: usize) -> bool {
        self.tracked.contains(&id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub intrinsic: Matrix3<f64>,
    intrinsic_inv: Matrix3<f64>,
    /// Half-cone angle, rad.
    pub alpha_fov: f64,
    /// Maximum sensing range, m.
    pub r_max: f64,
}

impl CameraModel {
    pub fn new(intrinsic: Matrix3<f64>, alpha_fov: f64, r_max: f64) -> Result<Self> {
        let svd = intrinsic.svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > 0.0) || !(smax / smin).is_finite() || smax / smin > 1e12 {
            return Err(Error::InvalidArgument("camera intrinsic matrix is not invertible".into()));
        }
        let intrinsic_inv = intrinsic
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("camera intrinsic matrix is not invertible".into()))?;
        if !(alpha_fov > 0.0 && alpha_fov <= std::f64::consts::PI) {
            return Err(Error::InvalidArgument(format!("alpha_fov out of range: {alpha_fov}")));
        }
        Ok(Self { intrinsic, intrinsic_inv, alpha_fov, r_max })
    }

    pub fn identity(alpha_fov: f64, r_max: f64) -> Result<Self> {
        Self::new(Matrix3::identity(), alpha_fov, r_max)
    }

    /// Pinhole intrinsics with focal lengths and principal point offsets.
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64, alpha_fov: f64, r_max: f64) -> Result<Self> {
        let k = Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0);
        Self::new(k, alpha_fov, r_max)
    }

    pub fn intrinsic_inv(&self) -> &Matrix3<f64> {
        &self.intrinsic_inv
    }
}

/// Backward ray test for a convex spherical chief: lit iff the normal faces the sun.
pub fn illuminated(feature: &Feature, sun: &Vector3<f64>) -> bool {
    feature.surface_normal.dot(sun) > 0.0
}

/// Camera boresight: the deputy always points at the chief center.
pub fn boresight(deputy: &HillState) -> Result<Vector3<f64>> {
    let r = deputy.p_bh.norm();
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::InvalidArgument("deputy at chief center has no boresight".into()));
    }
    Ok(-deputy.p_bh / r)
}

pub fn in_fov(
    feature: &Feature,
    deputy: &HillState,
    boresight_normal: &Vector3<f64>,
    cam: &CameraModel,
    r_min: f64,
) -> bool {
    let rel = feature.p_h - deputy.p_bh;
    let range = rel.norm();
    if range < r_min || range > cam.r_max || range == 0.0 {
        return false;
    }
    let c = (rel.dot(boresight_normal) / range).clamp(-1.0, 1.0);
    c.acos() <= cam.alpha_fov
}

/// Line of sight from the deputy to the feature and its homogeneous pixel vector.
pub fn bearing_unit_vectors(
    feature: &Feature,
    deputy: &HillState,
    cam: &CameraModel,
) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let rel = feature.p_h - deputy.p_bh;
    let range = rel.norm();
    if !(range > 0.0) || !range.is_finite() {
        return Err(Error::InvalidArgument(format!("feature {} at zero range", feature.id)));
    }
    let pixels = cam.intrinsic * rel;
    let ray = cam.intrinsic_inv * pixels;
    let u = ray / ray.norm();
    Ok((u, pixels))
}

/// Recovers the unit line of sight from a homogeneous pixel vector.
pub fn unproject(pixels: &Vector3<f64>, cam: &CameraModel) -> Result<Vector3<f64>> {
    let ray = cam.intrinsic_inv * pixels;
    let n = ray.norm();
    if !(n > 0.0) {
        return Err(Error::InvalidArgument("zero pixel vector".into()));
    }
    Ok(ray / n)
}

/// Least-squares plane normal of the points' centered scatter, oriented toward `viewpoint`.
///
/// Bearings from the deputy are passed with `viewpoint = 0`.
pub fn plane_normal(points: &[Vector3<f64>], viewpoint: &Vector3<f64>) -> Result<Vector3<f64>> {
    if points.len() < 4 {
        return Err(Error::InsufficientFeatures(format!("{} points, need at least 4", points.len())));
    }
    let centroid = points.iter().fold(Vector3::zeros(), |a, p| a + p) / points.len() as f64;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        scatter += d * d.transpose();
    }
    let eig = scatter.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l_mid, l_max) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if !(l_max > 0.0) || l_mid <= 1e-12 * l_max {
        return Err(Error::InsufficientFeatures("degenerate (collinear) feature layout".into()));
    }
    let mut n: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned();
    n.normalize_mut();
    if n.dot(&(viewpoint - centroid)) < 0.0 {
        n = -n;
    }
    Ok(n)
}

/// Builds the visibility set and picks up to `n_track` features closest to the boresight.
pub fn compute_visibility(
    features: &[Feature],
    deputy: &HillState,
    sun: &Vector3<f64>,
    cam: &CameraModel,
    r_min: f64,
    n_track: usize,
) -> Result<VisibilitySet> {
    let bs = boresight(deputy)?;
    let mut vis = VisibilitySet::default();
    let mut candidates = Vec::new();
    for f in features {
        let lit = illuminated(f, sun);
        let fov = in_fov(f, deputy, &bs, cam, r_min);
        if lit {
            vis.illuminated.push(f.id);
        }
        if fov {
            vis.in_fov.push(f.id);
        }
        if lit && fov {
            let rel = f.p_h - deputy.p_bh;
            let c = (rel.dot(&bs) / rel.norm()).clamp(-1.0, 1.0);
            candidates.push((c.acos(), f.id));
        }
    }
    vis.in_fov.sort_unstable();
    vis.illuminated.sort_unstable();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    vis.tracked = candidates.into_iter().take(n_track).map(|(_, id)| id).collect();
    Ok(vis)
}

/// Marks every visible feature inspected; returns how many were new.
pub fn update_inspection(features: &mut [Feature], visibility: &VisibilitySet, t: f64) -> usize {
    let mut fresh = 0;
    for f in features.iter_mut() {
        if !f.inspected && visibility.is_visible(f.id) {
            f.inspected = true;
            f.first_inspected_time = Some(t);
            fresh += 1;
        }
    }
    fresh
}

pub fn inspected_count(features: &[Feature]) -> usize {
    features.iter().filter(|f| f.inspected).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn deputy_at(p: Vector3<f64>) -> HillState {
        HillState::new(p, Vector3::zeros(), 0.0)
    }

    #[test]
    fn sphere_layout() {
        let fs = fibonacci_sphere(99, 10.0).unwrap();
        assert_eq!(fs.len(), 99);
        for (i, f) in fs.iter().enumerate() {
            assert_eq!(f.id, i + 1);
            assert_relative_eq!(f.p_h.norm(), 10.0, epsilon = 1e-12);
            assert_relative_eq!(f.surface_normal, f.p_h / 10.0, epsilon = 1e-15);
        }
        let mean = fs.iter().fold(Vector3::zeros(), |a, f| a + f.p_h) / 99.0;
        assert!(mean.norm() < 0.5);
    }

    #[test]
    fn hemisphere_lighting() {
        let mk = |n: Vector3<f64>| Feature::on_sphere(1, n).unwrap();
        let sun = Vector3::new(1.0, 0.0, 0.0);
        assert!(illuminated(&mk(Vector3::new(1.0, 0.0, 0.0)), &sun));
        assert!(!illuminated(&mk(Vector3::new(-1.0, 0.0, 0.0)), &sun));
    }

    #[test]
    fn fov_cone_boundary() {
        let cam = CameraModel::identity(PI / 3.0, 800.0).unwrap();
        let dep = deputy_at(Vector3::new(-407.5, 0.0, 0.0));
        let bs = boresight(&dep).unwrap();
        let f = Feature::on_sphere(1, Vector3::new(0.0, 0.0, 0.0) + Vector3::new(1e-9, 0.0, 0.0)).unwrap();
        assert!(in_fov(&f, &dep, &bs, &cam, 15.0));

        let dep = deputy_at(Vector3::new(-100.0, 0.0, 0.0));
        let bs = boresight(&dep).unwrap();
        let a = PI / 3.0 + 0.01;
        let p = dep.p_bh + Vector3::new(a.cos(), a.sin(), 0.0) * 50.0;
        assert!(!in_fov(&Feature::on_sphere(2, p).unwrap(), &dep, &bs, &cam, 15.0));
        let a = PI / 3.0 - 0.01;
        let p = dep.p_bh + Vector3::new(a.cos(), a.sin(), 0.0) * 50.0;
        assert!(in_fov(&Feature::on_sphere(3, p).unwrap(), &dep, &bs, &cam, 15.0));
    }

    #[test]
    fn bearing_identity_camera() {
        let cam = CameraModel::identity(PI / 3.0, 800.0).unwrap();
        let dep = deputy_at(Vector3::new(0.0, 0.0, -10.0));
        let f = Feature::on_sphere(1, Vector3::new(0.0, 0.0, 1e-9)).unwrap();
        let (u, _) = bearing_unit_vectors(&f, &dep, &cam).unwrap();
        assert_relative_eq!(u, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
        let dep = deputy_at(f.p_h);
        assert!(bearing_unit_vectors(&f, &dep, &cam).is_err());
    }

    #[test]
    fn pinhole_round_trip() {
        let cam = CameraModel::pinhole(500.0, 500.0, 320.0, 240.0, PI / 3.0, 800.0).unwrap();
        let dep = deputy_at(Vector3::new(-50.0, 3.0, 2.0));
        for f in fibonacci_sphere(99, 10.0).unwrap() {
            let (u, pix) = bearing_unit_vectors(&f, &dep, &cam).unwrap();
            let geo = (f.p_h - dep.p_bh).normalize();
            assert!((u - geo).norm() < 1e-10);
            assert!((unproject(&pix, &cam).unwrap() - geo).norm() < 1e-10);
        }
        assert!(CameraModel::new(Matrix3::zeros(), 1.0, 800.0).is_err());
    }

    #[test]
    fn plane_normal_cases() {
        let pts = [
            Vector3::new(0.0, 0.0, 2.0),
            Vector3::new(1.0, 0.0, 2.0),
            Vector3::new(0.0, 1.0, 2.0),
            Vector3::new(1.0, 1.0, 2.0),
        ];
        let n = plane_normal(&pts, &Vector3::zeros()).unwrap();
        assert_relative_eq!(n, Vector3::new(0.0, 0.0, -1.0), epsilon = 1e-12);
        let n = plane_normal(&pts, &Vector3::new(0.0, 0.0, 9.0)).unwrap();
        assert_relative_eq!(n, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-12);

        let line: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(plane_normal(&line, &Vector3::zeros()), Err(Error::InsufficientFeatures(_))));
        assert!(plane_normal(&pts[..3], &Vector3::zeros()).is_err());
    }

    #[test]
    fn tracked_subset_and_inspection() {
        let cam = CameraModel::identity(PI / 3.0, 800.0).unwrap();
        let mut fs = fibonacci_sphere(99, 10.0).unwrap();
        let dep = deputy_at(Vector3::new(-50.0, 0.0, 0.0));
        let sun = Vector3::new(1.0, 0.0, 0.0);
        let vis = compute_visibility(&fs, &dep, &sun, &cam, 15.0, 5).unwrap();
        assert_eq!(vis.tracked.len(), 5);
        assert!(vis.tracked.iter().all(|&id| vis.is_visible(id)));

        assert_eq!(update_inspection(&mut fs, &VisibilitySet::default(), 0.0), 0);
        let n_new = update_inspection(&mut fs, &vis, 0.0);
        assert_eq!(n_new, vis.in_fov.iter().filter(|id| vis.illuminated.contains(id)).count());
        assert_eq!(update_inspection(&mut fs, &vis, 1.0), 0);

        let all: Vec<usize> = (1..=99).collect();
        let full = VisibilitySet { in_fov: all.clone(), illuminated: all, tracked: vec![] };
        update_inspection(&mut fs, &full, 2.0);
        assert_eq!(inspected_count(&fs), 99);
    }
}
