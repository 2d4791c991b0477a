//! Isosurface extraction with the classic 256-case marching-cubes table.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::grid::VoxelGrid;
use crate::geometry::mc_table::TRI_TABLE;
use crate::geometry::mesh::TriMesh;
use crate::geometry::vec3::{self, Vec3};

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Extracts the `iso` level set of one grid channel.
///
/// Triangles face toward increasing field values. Vertices are shared between
/// neighbouring cells and ordered by first use; zero-area triangles are dropped.
/// A field without a sign change yields an empty mesh.
pub fn marching_cubes(grid: &VoxelGrid, channel: usize, iso: f64) -> Result<TriMesh> {
    let values = grid
        .channels
        .get(channel)
        .ok_or_else(|| Error::dims("grid channel", grid.channels.len(), channel + 1))?;
    if values.len() != grid.n_points() {
        return Err(Error::dims("grid values", grid.n_points(), values.len()));
    }
    if !values.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("grid values".into()));
    }
    let [nx, ny, nz] = grid.dims;
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    // Lattice edge (lower node index, axis) -> vertex id.
    let mut edge_vertex: HashMap<(usize, usize), usize> = HashMap::new();

    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let node = |c: usize| {
                    let [di, dj, dk] = CORNERS[c];
                    grid.index(i + di, j + dj, k + dk)
                };
                let mut case = 0usize;
                for c in 0..8 {
                    if values[node(c)] < iso {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRI_TABLE[case];
                let mut tri = [0usize; 3];
                for (t, &e) in row.iter().take_while(|&&e| e >= 0).enumerate() {
                    let [c0, c1] = EDGES[e as usize];
                    let (n0, n1) = (node(c0), node(c1));
                    let (lo, hi) = if n0 < n1 { (n0, n1) } else { (n1, n0) };
                    let axis = match hi - lo {
                        1 => 0,
                        d if d == nx => 1,
                        _ => 2,
                    };
                    let id = *edge_vertex.entry((lo, axis)).or_insert_with(|| {
                        let (va, vb) = (values[lo], values[hi]);
                        let t = (iso - va) / (vb - va);
                        let pa = lattice_point(grid, lo);
                        let pb = lattice_point(grid, hi);
                        vertices.push(vec3::add(pa, vec3::scale(vec3::sub(pb, pa), t)));
                        vertices.len() - 1
                    });
                    tri[t % 3] = id;
                    if t % 3 == 2 {
                        // Table winding faces the below-iso side; reverse it.
                        faces.push([tri[0], tri[2], tri[1]]);
                    }
                }
            }
        }
    }

    faces.retain(|f| {
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            return false;
        }
        let [a, b, c] = f.map(|i| vertices[i]);
        vec3::norm(vec3::cross(vec3::sub(b, a), vec3::sub(c, a))) > 0.0
    });
    if faces.is_empty() {
        return Ok(TriMesh::empty());
    }
    compact(vertices, faces)
}

/// Zero-level sets of every channel, in channel order.
pub fn extract_surfaces(grid: &VoxelGrid) -> Result<Vec<TriMesh>> {
    (0..grid.channels.len())
        .map(|c| marching_cubes(grid, c, 0.0))
        .collect()
}

fn lattice_point(grid: &VoxelGrid, idx: usize) -> Vec3 {
    let [nx, ny, _] = grid.dims;
    grid.point(idx % nx, (idx / nx) % ny, idx / (nx * ny))
}

/// Drops vertices no longer referenced after degenerate-face removal.
fn compact(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<TriMesh> {
    let mut remap = vec![usize::MAX; vertices.len()];
    let mut kept = Vec::with_capacity(vertices.len());
    let mut out_faces = Vec::with_capacity(faces.len());
    for f in faces {
        out_faces.push(f.map(|v| {
            if remap[v] == usize::MAX {
                remap[v] = kept.len();
                kept.push(vertices[v]);
            }
            remap[v]
        }));
    }
    TriMesh::new(kept, out_faces)
}
