//! Meshes, signed distances, sampling, lattices and isosurfaces.

pub mod curvature;
pub mod distance;
pub mod grid;
pub mod marching_cubes;
mod mc_table;
pub mod mesh;
pub mod sampling;
pub mod synthetic;
pub mod vec3;

pub use curvature::curvature_weights;
pub use distance::{signed_distance, SignedDistance};
pub use grid::{evaluate_grid, VoxelGrid};
pub use marching_cubes::{extract_surfaces, marching_cubes};
pub use mesh::TriMesh;
pub use sampling::{sample_training_points, SamplingConfig};
pub use synthetic::{make_synthetic_shapes, SyntheticShape};
