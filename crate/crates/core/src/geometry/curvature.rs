//! Discrete curvature and the curvature-based face weights used for sampling.
//!
//! Gaussian curvature at a vertex is its angle defect over its barycentric area;
//! mean curvature is half the magnitude of the cotangent Laplacian of the
//! position. Face values average the absolute vertex curvatures.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::mesh::TriMesh;
use crate::geometry::vec3;

#[derive(Clone, Debug, PartialEq)]
pub struct VertexCurvature {
    pub gaussian: Vec<f64>,
    pub mean: Vec<f64>,
    /// Barycentric (one third of incident face area) vertex areas.
    pub area: Vec<f64>,
}

pub fn vertex_curvature(mesh: &TriMesh) -> VertexCurvature {
    let nv = mesh.vertices().len();
    let mut angle_sum = vec![0.0; nv];
    let mut area = vec![0.0; nv];
    let mut laplace = vec![[0.0; 3]; nv];
    for (fi, f) in mesh.faces().iter().enumerate() {
        let p = mesh.triangle(fi);
        let a3 = mesh.areas()[fi] / 3.0;
        for k in 0..3 {
            let (i, j, o) = (k, (k + 1) % 3, (k + 2) % 3);
            area[f[i]] += a3;
            // Interior angle and cotangent at corner `o`, opposite edge (i, j).
            let e1 = vec3::sub(p[i], p[o]);
            let e2 = vec3::sub(p[j], p[o]);
            let cr = vec3::norm(vec3::cross(e1, e2));
            let dt = vec3::dot(e1, e2);
            angle_sum[f[o]] += cr.atan2(dt);
            let cot = dt / cr;
            let d = vec3::sub(p[j], p[i]);
            laplace[f[i]] = vec3::add(laplace[f[i]], vec3::scale(d, cot));
            laplace[f[j]] = vec3::sub(laplace[f[j]], vec3::scale(d, cot));
        }
    }
    let gaussian = (0..nv)
        .map(|v| {
            if area[v] > 0.0 {
                (2.0 * PI - angle_sum[v]) / area[v]
            } else {
                0.0
            }
        })
        .collect();
    let mean = (0..nv)
        .map(|v| {
            if area[v] > 0.0 {
                0.5 * vec3::norm(laplace[v]) / (2.0 * area[v])
            } else {
                0.0
            }
        })
        .collect();
    VertexCurvature {
        gaussian,
        mean,
        area,
    }
}

/// Per-face weights `lambda |k|^rho / int |k|^rho + (1 - lambda) |H|^rho / int |H|^rho`,
/// so that `sum_F w_F A_F = 1`. A term whose integral vanishes is replaced by the
/// uniform density `1 / total_area`.
pub fn curvature_weights(mesh: &TriMesh, lambda: f64, rho: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&lambda) || !(rho > 0.0) {
        return Err(Error::InvalidConfig(
            "curvature weights need 0 <= lambda <= 1 and rho > 0".into(),
        ));
    }
    if mesh.is_empty() {
        return Err(Error::Empty("mesh has no faces"));
    }
    if let Some(fi) = mesh.areas().iter().position(|a| !(*a > 0.0)) {
        return Err(Error::DegenerateFace(fi));
    }
    let vc = vertex_curvature(mesh);
    let face_avg = |vals: &[f64]| -> Vec<f64> {
        mesh.faces()
            .iter()
            .map(|f| (f.iter().map(|&v| vals[v].abs()).sum::<f64>() / 3.0).powf(rho))
            .collect()
    };
    let kappa = face_avg(&vc.gaussian);
    let eta = face_avg(&vc.mean);
    let total_area = mesh.total_area();
    let normalizer =
        |vals: &[f64]| -> f64 { vals.iter().zip(mesh.areas()).map(|(v, a)| v * a).sum() };
    let (ik, ie) = (normalizer(&kappa), normalizer(&eta));
    let weights = (0..kappa.len())
        .map(|f| {
            let tk = if ik > 0.0 {
                kappa[f] / ik
            } else {
                1.0 / total_area
            };
            let te = if ie > 0.0 {
                eta[f] / ie
            } else {
                1.0 / total_area
            };
            lambda * tk + (1.0 - lambda) * te
        })
        .collect::<Vec<_>>();
    if !weights.iter().all(|w| w.is_finite() && *w >= 0.0) {
        return Err(Error::NonFinite("curvature weights".into()));
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::vec3::Rigid;

    #[test]
    fn sphere_curvatures_near_analytic() {
        let r = 5.0;
        let m = TriMesh::ellipsoid([0.0; 3], [r; 3], 4).unwrap();
        let vc = vertex_curvature(&m);
        // Total angle defect is 4 pi by Gauss-Bonnet.
        let total: f64 = vc.gaussian.iter().zip(&vc.area).map(|(k, a)| k * a).sum();
        assert!((total - 4.0 * PI).abs() < 1e-9);
        let mean_h = vc.mean.iter().sum::<f64>() / vc.mean.len() as f64;
        assert!((mean_h - 1.0 / r).abs() < 0.01 / r, "{mean_h}");
    }

    #[test]
    fn uniform_gaussian_curvature_gives_uniform_weights() {
        let m = TriMesh::icosphere(0);
        let w = curvature_weights(&m, 1.0, 0.75).unwrap();
        let first = w[0];
        assert!(w.iter().all(|x| (x - first).abs() < 1e-9 * first));
        let integral: f64 = w.iter().zip(m.areas()).map(|(w, a)| w * a).sum();
        assert!((integral - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weights_invariant_under_rigid_motion() {
        let m = TriMesh::ellipsoid([0.0; 3], [3.0, 5.0, 9.0], 3).unwrap();
        let t = Rigid::from_axis_angle([1.0, 2.0, -0.5], 0.7, [4.0, -3.0, 11.0]);
        let a = curvature_weights(&m, 0.1, 0.75).unwrap();
        let b = curvature_weights(&m.transformed(&t), 0.1, 0.75).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn ellipsoid_tips_outweigh_equator() {
        // Prolate spheroid (1, 1, 3): analytic mean curvature is 3 at the poles and
        // (1 + 1/9) / 2 = 5/9 on the equator.
        let m = TriMesh::ellipsoid([0.0; 3], [1.0, 1.0, 3.0], 4).unwrap();
        let vc = vertex_curvature(&m);
        for (v, p) in m.vertices().iter().enumerate() {
            if p[2].abs() > 3.0 - 1e-9 {
                assert!((vc.mean[v] - 3.0).abs() < 0.3, "pole {}", vc.mean[v]);
            } else if p[2].abs() < 1e-9 {
                // Cotan curvature is biased on the stretched triangulation; loose bound.
                assert!(
                    (vc.mean[v] - 5.0 / 9.0).abs() < 0.15,
                    "equator {}",
                    vc.mean[v]
                );
            }
        }
        let sphere = curvature_weights(&TriMesh::icosphere(4), 0.0, 1.0).unwrap();
        let spread = sphere.iter().cloned().fold(0.0, f64::max)
            / sphere.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(
            spread < 1.2,
            "sphere weights nearly uniform, spread {spread}"
        );
        let w = curvature_weights(&m, 0.0, 1.0).unwrap();
        let (mut tip, mut equator) = (Vec::new(), Vec::new());
        for (f, c) in m.centroids().iter().enumerate() {
            if c[2].abs() > 2.8 {
                tip.push(w[f]);
            } else if c[2].abs() < 0.2 {
                equator.push(w[f]);
            }
        }
        let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(!tip.is_empty() && !equator.is_empty());
        assert!(avg(&tip) > avg(&equator));
        assert!(
            tip.iter().cloned().fold(f64::INFINITY, f64::min)
                > equator.iter().cloned().fold(0.0, f64::max)
        );
    }

    #[test]
    fn rejects_bad_parameters() {
        let m = TriMesh::icosphere(0);
        assert!(curvature_weights(&m, 1.5, 1.0).is_err());
        assert!(curvature_weights(&m, 0.5, 0.0).is_err());
    }
}
