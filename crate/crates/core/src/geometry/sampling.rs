//! Training-point generation: curvature-weighted surface samples plus a band of
//! samples displaced along face normals, labelled with signed distances to every
//! surface of the shape.

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::curvature::curvature_weights;
use crate::geometry::distance::SignedDistance;
use crate::geometry::mesh::TriMesh;
use crate::geometry::vec3::{self, Vec3};
use crate::rng::rng_for;
use crate::training::ShapeSamples;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub n_surface: usize,
    pub n_band: usize,
    /// Band samples move up to this distance (mm) along the face normal, either side.
    pub band_halfwidth: f64,
    pub lambda: f64,
    pub rho: f64,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_surface: 3000,
            n_band: 1000,
            band_halfwidth: 30.0,
            lambda: 0.1,
            rho: 0.75,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.band_halfwidth > 0.0) {
            return Err(Error::InvalidConfig(
                "band_halfwidth must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda) || !(self.rho > 0.0) {
            return Err(Error::InvalidConfig(
                "need 0 <= lambda <= 1 and rho > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Face-selection probabilities proportional to `w_F * A_F`.
pub fn face_probabilities(mesh: &TriMesh, lambda: f64, rho: f64) -> Result<Vec<f64>> {
    let w = curvature_weights(mesh, lambda, rho)?;
    let mass: Vec<f64> = w.iter().zip(mesh.areas()).map(|(w, a)| w * a).collect();
    let total: f64 = mass.iter().sum();
    Ok(mass.into_iter().map(|m| m / total).collect())
}

/// Draws `n` face indices from the given (unnormalized) face masses.
pub fn sample_faces<R: Rng + ?Sized>(mass: &[f64], n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let dist =
        WeightedIndex::new(mass).map_err(|e| Error::InvalidConfig(format!("face weights: {e}")))?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}

/// Uniform point in a triangle.
pub fn sample_in_triangle<R: Rng + ?Sized>(tri: &[Vec3; 3], rng: &mut R) -> Vec3 {
    let r1: f64 = rng.random::<f64>().sqrt();
    let r2: f64 = rng.random();
    let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
    vec3::add(
        vec3::add(vec3::scale(tri[0], wa), vec3::scale(tri[1], wb)),
        vec3::scale(tri[2], wc),
    )
}

/// Samples one shape. `meshes[j]` is surface `j`; every returned point carries the
/// signed distance to all surfaces. Surface samples come first, then band samples,
/// surface by surface.
pub fn sample_training_points(
    id: &str,
    meshes: &[TriMesh],
    cfg: &SamplingConfig,
) -> Result<ShapeSamples> {
    cfg.validate()?;
    if meshes.is_empty() {
        return Err(Error::Empty("shape has no surfaces"));
    }
    let queries = meshes
        .iter()
        .map(SignedDistance::new)
        .collect::<Result<Vec<_>>>()?;
    let mut rng = rng_for(cfg.seed, &format!("sample/{id}"));
    let mut points: Vec<Vec3> = Vec::with_capacity(meshes.len() * (cfg.n_surface + cfg.n_band));
    for mesh in meshes {
        let mass = face_probabilities(mesh, cfg.lambda, cfg.rho)?;
        for f in sample_faces(&mass, cfg.n_surface, &mut rng)? {
            points.push(sample_in_triangle(&mesh.triangle(f), &mut rng));
        }
        for f in sample_faces(&mass, cfg.n_band, &mut rng)? {
            let p = sample_in_triangle(&mesh.triangle(f), &mut rng);
            let u = rng.random_range(-cfg.band_halfwidth..=cfg.band_halfwidth);
            points.push(vec3::add(p, vec3::scale(mesh.normals()[f], u)));
        }
    }
    let mut pts = Array2::zeros((points.len(), 3));
    let mut dist = Array2::zeros((points.len(), meshes.len()));
    for (r, p) in points.iter().enumerate() {
        pts[[r, 0]] = p[0];
        pts[[r, 1]] = p[1];
        pts[[r, 2]] = p[2];
        for (j, q) in queries.iter().enumerate() {
            dist[[r, j]] = q.query(*p);
        }
    }
    Ok(ShapeSamples {
        id: id.to_string(),
        points: pts,
        distances: dist,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn surface_points_lie_on_their_mesh() {
        let meshes = vec![
            TriMesh::ellipsoid([0.0; 3], [10.0, 12.0, 20.0], 2).unwrap(),
            TriMesh::ellipsoid([0.0; 3], [14.0, 16.0, 24.0], 2).unwrap(),
        ];
        let cfg = SamplingConfig {
            n_surface: 200,
            n_band: 0,
            ..SamplingConfig::default()
        };
        let s = sample_training_points("a", &meshes, &cfg).unwrap();
        assert_eq!(s.len(), 400);
        for r in 0..400 {
            let own = r / 200;
            assert!(s.distances[[r, own]].abs() < 1e-9);
        }
        // Inner-surface points sit inside the outer surface.
        assert!((0..200).all(|r| s.distances[[r, 1]] < 0.0));
    }

    #[test]
    fn band_offset_matches_distance_on_flat_faces() {
        let big = TriMesh::cuboid([-500.0; 3], [500.0; 3]).unwrap();
        let cfg = SamplingConfig {
            n_surface: 0,
            n_band: 300,
            band_halfwidth: 30.0,
            ..SamplingConfig::default()
        };
        let s = sample_training_points("box", &[big], &cfg).unwrap();
        let mut checked = 0;
        for r in 0..s.len() {
            let p = s.points.row(r);
            // Offset along the face normal: distance to the nearest face plane.
            let depth = p.iter().map(|c| c.abs()).fold(0.0, f64::max) - 500.0;
            let others_far = p.iter().filter(|c| c.abs() > 500.0 - 60.0).count() == 1;
            if others_far {
                assert!((s.distances[[r, 0]] - depth).abs() < 1e-9);
                checked += 1;
            }
        }
        assert!(checked > 200);
    }

    #[test]
    fn deterministic_per_seed() {
        let m = vec![TriMesh::icosphere(2)];
        let cfg = SamplingConfig {
            n_surface: 50,
            n_band: 20,
            ..SamplingConfig::default()
        };
        let a = sample_training_points("x", &m, &cfg).unwrap();
        let b = sample_training_points("x", &m, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn triangle_samples_stay_in_plane() {
        let tri = [[0.0, 0.0, 1.0], [2.0, 0.0, 1.0], [0.0, 3.0, 1.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let p = sample_in_triangle(&tri, &mut rng);
            assert!((p[2] - 1.0).abs() < 1e-15);
            assert!(p[0] >= 0.0 && p[1] >= 0.0 && p[0] / 2.0 + p[1] / 3.0 <= 1.0 + 1e-12);
        }
    }
}
