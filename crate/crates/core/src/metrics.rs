//! Reconstruction metrics between point sets and meshes.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::mesh::TriMesh;
use crate::geometry::sampling::sample_in_triangle;
use crate::geometry::vec3::{self, Vec3};
use crate::rng::rng_for;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub n_metric_samples: usize,
    /// Kernel width of the LDDMM current inner product, mm^-2.
    pub gamma: f64,
    pub seed: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            n_metric_samples: 50_000,
            gamma: 1.0,
            seed: 0,
        }
    }
}

const LEAF: usize = 8;

/// Static 3-d tree for exact nearest-neighbour queries.
#[derive(Clone, Debug)]
pub struct KdTree {
    /// Points paired with their index in the input slice.
    items: Vec<(Vec3, usize)>,
    nodes: Vec<KdNode>,
}

#[derive(Clone, Debug)]
enum KdNode {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

impl KdTree {
    pub fn build(points: &[Vec3]) -> Self {
        let mut items: Vec<(Vec3, usize)> = points.iter().copied().zip(0..).collect();
        let mut nodes = Vec::new();
        if !items.is_empty() {
            let n = items.len();
            build_kd(&mut items, 0, n, &mut nodes);
        }
        Self { items, nodes }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Squared distance to the nearest stored point and that point.
    pub fn nearest(&self, q: Vec3) -> Option<(f64, Vec3)> {
        self.nearest_slot(q).map(|(d, s)| (d, self.items[s].0))
    }

    /// Squared distance to the nearest stored point and its input index.
    /// Ties go to the lowest index.
    pub fn nearest_index(&self, q: Vec3) -> Option<(f64, usize)> {
        self.nearest_slot(q).map(|(d, s)| (d, self.items[s].1))
    }

    fn nearest_slot(&self, q: Vec3) -> Option<(f64, usize)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        self.search(0, q, &mut best);
        Some(best)
    }

    fn search(&self, node: usize, q: Vec3, best: &mut (f64, usize)) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for (slot, (p, i)) in self.items[start..end].iter().enumerate() {
                    let d = vec3::dist_sq(q, *p);
                    let better = d < best.0 || (d == best.0 && *i < self.items[best.1].1);
                    if better {
                        *best = (d, start + slot);
                    }
                }
            }
            KdNode::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, best);
                if diff * diff <= best.0 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn build_kd(
    items: &mut [(Vec3, usize)],
    start: usize,
    end: usize,
    nodes: &mut Vec<KdNode>,
) -> usize {
    let id = nodes.len();
    if end - start <= LEAF {
        nodes.push(KdNode::Leaf { start, end });
        return id;
    }
    let slice = &items[start..end];
    let mut lo = slice[0].0;
    let mut hi = slice[0].0;
    for (p, _) in slice {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0);
    let mid = (end - start) / 2;
    items[start..end].select_nth_unstable_by(mid, |a, b| a.0[axis].total_cmp(&b.0[axis]));
    let value = items[start + mid].0[axis];
    nodes.push(KdNode::Leaf { start, end });
    // Left holds coordinates <= value, right holds >= value.
    let left = build_kd(items, start, start + mid, nodes);
    let right = build_kd(items, start + mid, end, nodes);
    nodes[id] = KdNode::Split {
        axis,
        value,
        left,
        right,
    };
    id
}

/// Nearest-neighbour distance from every point of `from` to the set `to`.
pub fn directed_distances(from: &[Vec3], to: &[Vec3]) -> Result<Vec<f64>> {
    if from.is_empty() || to.is_empty() {
        return Err(Error::Empty("point set"));
    }
    let tree = KdTree::build(to);
    Ok(from
        .iter()
        .map(|p| tree.nearest(*p).expect("tree is nonempty").0.sqrt())
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sum of the mean nearest-neighbour distances in both directions.
pub fn chamfer(x: &[Vec3], y: &[Vec3]) -> Result<f64> {
    Ok(mean(&directed_distances(x, y)?) + mean(&directed_distances(y, x)?))
}

/// Largest nearest-neighbour distance over both directions.
pub fn hausdorff(x: &[Vec3], y: &[Vec3]) -> Result<f64> {
    let a = directed_distances(x, y)?.into_iter().fold(0.0, f64::max);
    let b = directed_distances(y, x)?.into_iter().fold(0.0, f64::max);
    Ok(a.max(b))
}

/// Mean nearest distance from each target point to the model points.
pub fn asymmetric_chamfer(target: &[Vec3], model: &[Vec3]) -> Result<f64> {
    Ok(mean(&directed_distances(target, model)?))
}

/// Gaussian-kernel current inner product between two face sets.
pub fn current_inner_product(a: &TriMesh, b: &TriMesh, gamma: f64) -> f64 {
    let weighted = |m: &TriMesh| -> Vec<Vec3> {
        m.normals()
            .iter()
            .zip(m.areas())
            .map(|(n, area)| vec3::scale(*n, *area))
            .collect()
    };
    let (na, nb) = (weighted(a), weighted(b));
    let (ca, cb) = (a.centroids(), b.centroids());
    let mut total = 0.0;
    for i in 0..na.len() {
        let mut row = 0.0;
        for j in 0..nb.len() {
            let k = (-gamma * vec3::dist_sq(ca[i], cb[j])).exp();
            row += k * vec3::dot(na[i], nb[j]);
        }
        total += row;
    }
    total
}

/// `C(gt, gt) + C(r, r) - 2 C(gt, r)`.
pub fn lddmm_loss(gt: &TriMesh, reconstruction: &TriMesh, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidConfig("gamma must be positive".into()));
    }
    for m in [gt, reconstruction] {
        if let Some(f) = m.areas().iter().position(|a| !(*a > 0.0)) {
            return Err(Error::DegenerateFace(f));
        }
    }
    Ok(current_inner_product(gt, gt, gamma)
        + current_inner_product(reconstruction, reconstruction, gamma)
        - 2.0 * current_inner_product(gt, reconstruction, gamma))
}

/// Area-uniform random points on a mesh.
pub fn mesh_to_points(mesh: &TriMesh, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if mesh.is_empty() {
        return Err(Error::Empty("mesh has no faces"));
    }
    let mut rng = rng_for(seed, "mesh-to-points");
    let dist = WeightedIndex::new(mesh.areas())
        .map_err(|e| Error::InvalidConfig(format!("face areas: {e}")))?;
    Ok((0..n)
        .map(|_| sample_in_triangle(&mesh.triangle(dist.sample(&mut rng)), &mut rng))
        .collect())
}

/// Metrics of one reconstructed surface against its ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMetrics {
    pub cd: f64,
    pub hd: f64,
    pub lddmm: f64,
}

impl SurfaceMetrics {
    /// LDDMM loss scaled by 1e-3, as tabulated.
    pub fn lddmm_e3(&self) -> f64 {
        self.lddmm * 1e-3
    }
}

pub fn compare_meshes(
    gt: &TriMesh,
    reconstruction: &TriMesh,
    cfg: &MetricsConfig,
) -> Result<SurfaceMetrics> {
    let a = mesh_to_points(gt, cfg.n_metric_samples, cfg.seed)?;
    let b = mesh_to_points(
        reconstruction,
        cfg.n_metric_samples,
        cfg.seed.wrapping_add(1),
    )?;
    Ok(SurfaceMetrics {
        cd: chamfer(&a, &b)?,
        hd: hausdorff(&a, &b)?,
        lddmm: lddmm_loss(gt, reconstruction, cfg.gamma)?,
    })
}
