//! Synthetic two-chamber shapes built from nested ellipsoids.
//!
//! Each shape has four closed surfaces in the order (LV inner, LV outer, RV inner,
//! RV outer). The LV pair is centred at the origin with its long axis along z; the
//! RV pair is shifted along +x. Parameters are drawn from uniform ranges:
//!
//! | parameter          | range (mm) |
//! |--------------------|------------|
//! | LV short semi-axis | 15 - 22    |
//! | LV long semi-axis  | 22 - 30    |
//! | RV short semi-axis | 15 - 22    |
//! | RV long semi-axis  | 22 - 30    |
//! | wall thickness     | 3 - 10     |
//! | RV offset          | 20 - 35    |
//!
//! Outer surfaces add the wall thickness to every inner semi-axis, so each inner
//! ellipsoid lies strictly inside its outer one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::mesh::TriMesh;
use crate::rng::rng_for;

/// Icosphere subdivision level used for every surface.
pub const SYNTHETIC_LEVEL: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub lv_short: f64,
    pub lv_long: f64,
    pub rv_short: f64,
    pub rv_long: f64,
    pub wall: f64,
    pub rv_offset: f64,
}

impl ShapeParams {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            lv_short: rng.random_range(15.0..22.0),
            lv_long: rng.random_range(22.0..30.0),
            rv_short: rng.random_range(15.0..22.0),
            rv_long: rng.random_range(22.0..30.0),
            wall: rng.random_range(3.0..10.0),
            rv_offset: rng.random_range(20.0..35.0),
        }
    }

    pub fn meshes(&self, level: usize) -> Result<Vec<TriMesh>> {
        let lv = [self.lv_short, self.lv_short, self.lv_long];
        let rv = [self.rv_short, self.rv_short, self.rv_long];
        let grow = |a: [f64; 3]| a.map(|v| v + self.wall);
        let rv_center = [self.rv_offset, 0.0, 0.0];
        Ok(vec![
            TriMesh::ellipsoid([0.0; 3], lv, level)?,
            TriMesh::ellipsoid([0.0; 3], grow(lv), level)?,
            TriMesh::ellipsoid(rv_center, rv, level)?,
            TriMesh::ellipsoid(rv_center, grow(rv), level)?,
        ])
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticShape {
    pub id: String,
    pub params: ShapeParams,
    pub meshes: Vec<TriMesh>,
}

impl SyntheticShape {
    /// Diagonal of the bounding box over all surfaces.
    pub fn diameter(&self) -> f64 {
        shape_diameter(&self.meshes)
    }
}

pub fn shape_diameter(meshes: &[TriMesh]) -> f64 {
    let pts: Vec<_> = meshes
        .iter()
        .flat_map(|m| m.vertices().iter().copied())
        .collect();
    match crate::geometry::mesh::bbox_of(&pts) {
        Some((lo, hi)) => crate::geometry::vec3::norm(crate::geometry::vec3::sub(hi, lo)),
        None => 0.0,
    }
}

/// Generates `n_shapes` shapes named `shape_000`, `shape_001`, ...
pub fn make_synthetic_shapes(n_shapes: usize, seed: u64) -> Result<Vec<SyntheticShape>> {
    if n_shapes == 0 {
        return Err(Error::InvalidConfig("n_shapes must be >= 1".into()));
    }
    let mut rng = rng_for(seed, "synthetic-shapes");
    (0..n_shapes)
        .map(|i| {
            let params = ShapeParams::draw(&mut rng);
            Ok(SyntheticShape {
                id: format!("shape_{i:03}"),
                meshes: params.meshes(SYNTHETIC_LEVEL)?,
                params,
            })
        })
        .collect()
}
