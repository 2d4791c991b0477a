//! Exact point-to-mesh distance with a bounding-volume hierarchy, and the sign
//! from the generalized winding number.

use std::f64::consts::PI;

use crate::error::Result;
use crate::geometry::mesh::TriMesh;
use crate::geometry::vec3::{self, Vec3};

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision Detection 5.1.5).
pub fn closest_point_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    use vec3::{add, dot, scale, sub};
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return add(a, scale(ab, v));
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return add(a, scale(ac, w));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return add(b, scale(sub(c, b), w));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    add(a, add(scale(ab, v), scale(ac, w)))
}

pub fn point_triangle_dist_sq(p: Vec3, tri: &[Vec3; 3]) -> f64 {
    vec3::dist_sq(p, closest_point_on_triangle(p, tri[0], tri[1], tri[2]))
}

/// Signed solid angle of triangle `abc` seen from `p` (Van Oosterom and Strackee).
pub fn solid_angle(p: Vec3, tri: &[Vec3; 3]) -> f64 {
    let a = vec3::sub(tri[0], p);
    let b = vec3::sub(tri[1], p);
    let c = vec3::sub(tri[2], p);
    let (la, lb, lc) = (vec3::norm(a), vec3::norm(b), vec3::norm(c));
    let num = vec3::dot(a, vec3::cross(b, c));
    let den = la * lb * lc + vec3::dot(a, b) * lc + vec3::dot(a, c) * lb + vec3::dot(b, c) * la;
    2.0 * num.atan2(den)
}

/// Generalized winding number: about 1 inside an outward-oriented closed mesh, 0 outside.
pub fn winding_number(mesh: &TriMesh, p: Vec3) -> f64 {
    (0..mesh.faces().len())
        .map(|f| solid_angle(p, &mesh.triangle(f)))
        .sum::<f64>()
        / (4.0 * PI)
}

#[derive(Clone, Copy, Debug)]
struct Aabb {
    min: Vec3,
    max: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: [f64::INFINITY; 3],
            max: [f64::NEG_INFINITY; 3],
        }
    }

    fn grow(&mut self, p: Vec3) {
        for k in 0..3 {
            self.min[k] = self.min[k].min(p[k]);
            self.max[k] = self.max[k].max(p[k]);
        }
    }

    fn dist_sq(&self, p: Vec3) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let e = (self.min[k] - p[k]).max(0.0).max(p[k] - self.max[k]);
            d += e * e;
        }
        d
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        bounds: Aabb,
        start: usize,
        end: usize,
    },
    Inner {
        bounds: Aabb,
        left: usize,
        right: usize,
    },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

const LEAF_SIZE: usize = 4;

/// Median-split bounding-volume hierarchy over a mesh's triangles.
#[derive(Clone, Debug)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
    tris: Vec<[Vec3; 3]>,
}

impl Bvh {
    pub fn build(mesh: &TriMesh) -> Self {
        let tris: Vec<[Vec3; 3]> = (0..mesh.faces().len()).map(|f| mesh.triangle(f)).collect();
        let centroids = mesh.centroids().to_vec();
        let mut order: Vec<usize> = (0..tris.len()).collect();
        let mut nodes = Vec::new();
        if !tris.is_empty() {
            build_node(&tris, &centroids, &mut order, 0, tris.len(), &mut nodes);
        }
        Self { nodes, order, tris }
    }

    /// Squared distance to the nearest triangle and its face index.
    pub fn nearest(&self, p: Vec3) -> Option<(f64, usize)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            if node.bounds().dist_sq(p) > best.0 {
                continue;
            }
            match *node {
                Node::Leaf { start, end, .. } => {
                    for &f in &self.order[start..end] {
                        let d = point_triangle_dist_sq(p, &self.tris[f]);
                        if d < best.0 || (d == best.0 && f < best.1) {
                            best = (d, f);
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[left].bounds().dist_sq(p);
                    let dr = self.nodes[right].bounds().dist_sq(p);
                    // Visit the closer child first.
                    if dl < dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        Some(best)
    }
}

fn build_node(
    tris: &[[Vec3; 3]],
    centroids: &[Vec3],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let mut bounds = Aabb::empty();
    let mut cbounds = Aabb::empty();
    for &f in &order[start..end] {
        tris[f].iter().for_each(|v| bounds.grow(*v));
        cbounds.grow(centroids[f]);
    }
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { bounds, start, end });
        return id;
    }
    let ext = vec3::sub(cbounds.max, cbounds.min);
    let axis = (0..3)
        .max_by(|&a, &b| ext[a].total_cmp(&ext[b]))
        .unwrap_or(0);
    let mid = start + (end - start) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        centroids[a][axis]
            .total_cmp(&centroids[b][axis])
            .then(a.cmp(&b))
    });
    nodes.push(Node::Leaf { bounds, start, end });
    let left = build_node(tris, centroids, order, start, mid, nodes);
    let right = build_node(tris, centroids, order, mid, end, nodes);
    nodes[id] = Node::Inner {
        bounds,
        left,
        right,
    };
    id
}

/// A watertight mesh prepared for signed-distance queries.
#[derive(Clone, Debug)]
pub struct SignedDistance<'a> {
    mesh: &'a TriMesh,
    bvh: Bvh,
}

impl<'a> SignedDistance<'a> {
    pub fn new(mesh: &'a TriMesh) -> Result<Self> {
        mesh.check_watertight()?;
        Ok(Self {
            mesh,
            bvh: Bvh::build(mesh),
        })
    }

    pub fn unsigned(&self, p: Vec3) -> f64 {
        self.bvh.nearest(p).map_or(f64::INFINITY, |(d, _)| d.sqrt())
    }

    /// Negative inside, positive outside.
    pub fn query(&self, p: Vec3) -> f64 {
        let d = self.unsigned(p);
        if d == 0.0 {
            return 0.0;
        }
        if winding_number(self.mesh, p) > 0.5 {
            -d
        } else {
            d
        }
    }
}

/// Signed distance from `p` to a watertight mesh.
pub fn signed_distance(mesh: &TriMesh, p: Vec3) -> Result<f64> {
    Ok(SignedDistance::new(mesh)?.query(p))
}

/// Unsigned distance by scanning every triangle.
pub fn brute_force_distance(mesh: &TriMesh, p: Vec3) -> f64 {
    (0..mesh.faces().len())
        .map(|f| point_triangle_dist_sq(p, &mesh.triangle(f)))
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}
