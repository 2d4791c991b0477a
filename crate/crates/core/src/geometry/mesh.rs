use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::vec3::{self, Rigid, Vec3};

/// Indexed triangle mesh with per-face centroid, unit normal and area caches.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    centroids: Vec<Vec3>,
    normals: Vec<Vec3>,
    areas: Vec<f64>,
}

impl TriMesh {
    /// Builds a mesh, rejecting out-of-range indices and zero-area faces.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mut centroids = Vec::with_capacity(faces.len());
        let mut normals = Vec::with_capacity(faces.len());
        let mut areas = Vec::with_capacity(faces.len());
        for (fi, f) in faces.iter().enumerate() {
            for &i in f {
                if i >= vertices.len() {
                    return Err(Error::FaceIndexOutOfRange {
                        face: fi,
                        index: i,
                        n_vertices: vertices.len(),
                    });
                }
            }
            let [a, b, c] = f.map(|i| vertices[i]);
            let n = vec3::cross(vec3::sub(b, a), vec3::sub(c, a));
            let twice_area = vec3::norm(n);
            if !(twice_area > 0.0) || f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::DegenerateFace(fi));
            }
            centroids.push(vec3::scale(vec3::add(vec3::add(a, b), c), 1.0 / 3.0));
            normals.push(vec3::scale(n, 1.0 / twice_area));
            areas.push(0.5 * twice_area);
        }
        if !vertices.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("mesh vertices".into()));
        }
        Ok(Self {
            vertices,
            faces,
            centroids,
            normals,
            areas,
        })
    }

    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
            faces: Vec::new(),
            centroids: Vec::new(),
            normals: Vec::new(),
            areas: Vec::new(),
        }
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn centroids(&self) -> &[Vec3] {
        &self.centroids
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        self.faces[f].map(|i| self.vertices[i])
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    /// Volume enclosed by the surface; positive for outward-facing orientation.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i]);
                vec3::dot(a, vec3::cross(b, c)) / 6.0
            })
            .sum()
    }

    /// Axis-aligned bounding box `(min, max)`; `None` for a mesh without vertices.
    pub fn bbox(&self) -> Option<(Vec3, Vec3)> {
        bbox_of(&self.vertices)
    }

    /// Fails with the first edge (in sorted order) not shared by exactly two faces.
    pub fn check_watertight(&self) -> Result<()> {
        if self.faces.is_empty() {
            return Err(Error::Empty("mesh has no faces"));
        }
        let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        match counts.into_iter().find(|(_, n)| *n != 2) {
            Some(((a, b), n)) => Err(Error::NotWatertight(a, b, n)),
            None => Ok(()),
        }
    }

    /// Same faces with every triangle's winding reversed.
    pub fn flipped(&self) -> Self {
        let faces = self.faces.iter().map(|f| [f[0], f[2], f[1]]).collect();
        Self::new(self.vertices.clone(), faces).expect("flipping preserves validity")
    }

    pub fn transformed(&self, t: &Rigid) -> Self {
        let vertices = self.vertices.iter().map(|v| t.apply(*v)).collect();
        Self::new(vertices, self.faces.clone()).expect("rigid motion preserves validity")
    }

    /// Affine map `x -> center + axes * x` applied componentwise.
    pub fn scaled(&self, axes: Vec3, center: Vec3) -> Result<Self> {
        let vertices = self
            .vertices
            .iter()
            .map(|v| {
                [
                    center[0] + axes[0] * v[0],
                    center[1] + axes[1] * v[1],
                    center[2] + axes[2] * v[2],
                ]
            })
            .collect();
        Self::new(vertices, self.faces.clone())
    }

    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {} {}", v[0], v[1], v[2]);
        }
        for f in &self.faces {
            let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        out
    }

    /// Parses `v` and `f` records; other records are ignored. Faces must be triangles
    /// and may use the `v/vt/vn` form.
    pub fn from_obj(text: &str) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let ctx = || format!("OBJ line {}", ln + 1);
            match parts.next() {
                Some("v") => {
                    let mut v = [0.0; 3];
                    for slot in &mut v {
                        *slot = parts
                            .next()
                            .ok_or_else(|| Error::parse(ctx(), "vertex needs 3 coordinates"))?
                            .parse()
                            .map_err(|e| Error::parse(ctx(), format!("{e}")))?;
                    }
                    vertices.push(v);
                }
                Some("f") => {
                    let idx: Vec<&str> = parts.collect();
                    if idx.len() != 3 {
                        return Err(Error::parse(ctx(), "only triangular faces are supported"));
                    }
                    let mut f = [0usize; 3];
                    for (slot, tok) in f.iter_mut().zip(idx) {
                        let head = tok.split('/').next().unwrap_or("");
                        let i: usize = head
                            .parse()
                            .map_err(|e| Error::parse(ctx(), format!("bad face index: {e}")))?;
                        if i == 0 {
                            return Err(Error::parse(ctx(), "face indices are 1-based"));
                        }
                        *slot = i - 1;
                    }
                    faces.push(f);
                }
                _ => {}
            }
        }
        Self::new(vertices, faces)
    }

    pub fn load_obj(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_obj(&text)
    }

    pub fn save_obj(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_obj()).map_err(|e| Error::io(path, e))
    }

    /// Unit icosphere: a regular icosahedron subdivided `level` times and projected
    /// onto the sphere, with outward-facing triangles.
    pub fn icosphere(level: usize) -> Self {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut vertices: Vec<Vec3> = [
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ]
        .into_iter()
        .map(vec3::normalize)
        .collect();
        let mut faces: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..level {
            let mut midpoint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
            let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vec3>| {
                *midpoint.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    let m = vec3::normalize(vec3::add(vertices[a], vertices[b]));
                    vertices.push(m);
                    vertices.len() - 1
                })
            };
            let mut next = Vec::with_capacity(faces.len() * 4);
            for [a, b, c] in faces {
                let ab = mid(a, b, &mut vertices);
                let bc = mid(b, c, &mut vertices);
                let ca = mid(c, a, &mut vertices);
                next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            faces = next;
        }
        Self::new(vertices, faces).expect("icosphere is valid")
    }

    /// Tessellated ellipsoid with the given semi-axes.
    pub fn ellipsoid(center: Vec3, semi_axes: Vec3, level: usize) -> Result<Self> {
        Self::icosphere(level).scaled(semi_axes, center)
    }

    /// Closed axis-aligned box with two triangles per side.
    pub fn cuboid(min: Vec3, max: Vec3) -> Result<Self> {
        let v = |i: usize| {
            [
                if i & 1 == 0 { min[0] } else { max[0] },
                if i & 2 == 0 { min[1] } else { max[1] },
                if i & 4 == 0 { min[2] } else { max[2] },
            ]
        };
        let vertices = (0..8).map(v).collect();
        let faces = vec![
            [0, 2, 1],
            [1, 2, 3],
            [4, 5, 6],
            [5, 7, 6],
            [0, 1, 4],
            [1, 5, 4],
            [2, 6, 3],
            [3, 6, 7],
            [0, 4, 2],
            [2, 4, 6],
            [1, 3, 5],
            [3, 7, 5],
        ];
        Self::new(vertices, faces)
    }
}

pub fn bbox_of(points: &[Vec3]) -> Option<(Vec3, Vec3)> {
    let first = *points.first()?;
    Some(points.iter().fold((first, first), |(lo, hi), p| {
        (
            [lo[0].min(p[0]), lo[1].min(p[1]), lo[2].min(p[2])],
            [hi[0].max(p[0]), hi[1].max(p[1]), hi[2].max(p[2])],
        )
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts_and_orientation() {
        let m = TriMesh::icosphere(2);
        assert_eq!(m.faces().len(), 320);
        assert_eq!(m.vertices().len(), 162);
        m.check_watertight().unwrap();
        assert!(m.signed_volume() > 0.0);
        for (c, n) in m.centroids().iter().zip(m.normals()) {
            assert!(vec3::dot(*c, *n) > 0.0);
        }
    }

    #[test]
    fn cuboid_is_closed_and_outward() {
        let m = TriMesh::cuboid([0.0; 3], [1.0, 2.0, 3.0]).unwrap();
        m.check_watertight().unwrap();
        assert!((m.signed_volume() - 6.0).abs() < 1e-12);
        assert!((m.total_area() - 22.0).abs() < 1e-12);
    }

    #[test]
    fn open_mesh_reports_edge() {
        let m = TriMesh::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        match m.check_watertight() {
            Err(Error::NotWatertight(0, 1, 1)) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn degenerate_and_out_of_range_faces() {
        let v = vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        assert!(matches!(
            TriMesh::new(v.clone(), vec![[0, 1, 2]]),
            Err(Error::DegenerateFace(0))
        ));
        assert!(matches!(
            TriMesh::new(v, vec![[0, 1, 5]]),
            Err(Error::FaceIndexOutOfRange { index: 5, .. })
        ));
    }

    #[test]
    fn obj_roundtrip() {
        let m = TriMesh::icosphere(1)
            .scaled([1.5, 2.0, 0.3], [0.1, 0.2, 0.3])
            .unwrap();
        let back = TriMesh::from_obj(&m.to_obj()).unwrap();
        assert_eq!(back, m);
        let slashed =
            TriMesh::from_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1\n").unwrap();
        assert_eq!(slashed.faces(), &[[0, 1, 2]]);
        assert!(TriMesh::from_obj("v 0 0 0\nf 1 2 3 4\n").is_err());
    }
}
