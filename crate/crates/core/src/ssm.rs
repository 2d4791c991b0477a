//! Linear statistical shape model and its fit to a target point cloud.
//!
//! An instance is `X + 1 b^T + sum_i alpha_i lambda_i V_i`. Fitting minimizes the
//! asymmetric Chamfer distance from the target to the instance plus
//! `beta * |alpha|_2`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::vec3::{self, Vec3};
use crate::metrics::KdTree;
use crate::optim::{Adam, AdamConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct SsmModel {
    /// `N x 3` mean points.
    pub mean: Array2<f64>,
    /// One `N x 3` displacement field per mode.
    pub modes: Vec<Array2<f64>>,
    pub eigenvalues: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SsmHeader {
    n_points: usize,
    n_modes: usize,
    eigenvalues: Vec<f64>,
}

impl SsmModel {
    pub fn new(mean: Array2<f64>, modes: Vec<Array2<f64>>, eigenvalues: Vec<f64>) -> Result<Self> {
        let m = Self {
            mean,
            modes,
            eigenvalues,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_points();
        if self.mean.ncols() != 3 {
            return Err(Error::dims("mean columns", 3, self.mean.ncols()));
        }
        if n == 0 {
            return Err(Error::Empty("shape model has no points"));
        }
        if self.modes.len() != self.eigenvalues.len() {
            return Err(Error::dims(
                "eigenvalues",
                self.modes.len(),
                self.eigenvalues.len(),
            ));
        }
        for v in &self.modes {
            if v.dim() != (n, 3) {
                return Err(Error::dims("mode points", n, v.nrows()));
            }
        }
        if !self.eigenvalues.iter().all(|l| *l > 0.0 && l.is_finite()) {
            return Err(Error::InvalidConfig("eigenvalues must be positive".into()));
        }
        let finite = self
            .mean
            .iter()
            .chain(self.modes.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("shape model arrays".into()));
        }
        Ok(())
    }

    pub fn n_points(&self) -> usize {
        self.mean.nrows()
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    /// Bounding-box diagonal of the mean shape.
    pub fn scale(&self) -> f64 {
        let pts = rows(&self.mean);
        let (lo, hi) = crate::geometry::mesh::bbox_of(&pts).expect("model has points");
        vec3::norm(vec3::sub(hi, lo))
    }

    /// Header line in JSON, then mean and modes as little-endian f64, row-major.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<ssm stream>", e);
        let header = SsmHeader {
            n_points: self.n_points(),
            n_modes: self.n_modes(),
            eigenvalues: self.eigenvalues.clone(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n").map_err(io)?;
        for a in std::iter::once(&self.mean).chain(&self.modes) {
            for v in a.iter() {
                out.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        out.flush().map_err(io)
    }

    pub fn read<R: BufRead>(mut input: R) -> Result<Self> {
        let io = |e| Error::io("<ssm stream>", e);
        let mut line = String::new();
        input.read_line(&mut line).map_err(io)?;
        let h: SsmHeader = serde_json::from_str(line.trim_end())?;
        if h.eigenvalues.len() != h.n_modes {
            return Err(Error::dims("eigenvalues", h.n_modes, h.eigenvalues.len()));
        }
        let mut read_block = || -> Result<Array2<f64>> {
            let mut buf = vec![0u8; h.n_points * 3 * 8];
            input
                .read_exact(&mut buf)
                .map_err(|e| Error::parse("shape model", format!("truncated array data: {e}")))?;
            let vals: Vec<f64> = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            Ok(Array2::from_shape_vec((h.n_points, 3), vals).expect("sized buffer"))
        };
        let mean = read_block()?;
        let modes = (0..h.n_modes)
            .map(|_| read_block())
            .collect::<Result<Vec<_>>>()?;
        let mut rest = Vec::new();
        input.read_to_end(&mut rest).map_err(io)?;
        if !rest.is_empty() {
            return Err(Error::parse(
                "shape model",
                "trailing bytes after mode arrays",
            ));
        }
        Self::new(mean, modes, h.eigenvalues)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(f))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(BufWriter::new(f))
    }
}

fn rows(a: &Array2<f64>) -> Vec<Vec3> {
    a.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect()
}

/// `X + 1 b^T + sum_i alpha_i lambda_i V_i`.
pub fn ssm_instance(model: &SsmModel, alpha: &[f64], b: Vec3) -> Result<Array2<f64>> {
    if alpha.len() != model.n_modes() {
        return Err(Error::dims("mode weights", model.n_modes(), alpha.len()));
    }
    let mut out = model.mean.clone();
    for ((v, l), a) in model.modes.iter().zip(&model.eigenvalues).zip(alpha) {
        out.scaled_add(a * l, v);
    }
    for mut r in out.rows_mut() {
        for k in 0..3 {
            r[k] += b[k];
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsmFitConfig {
    /// Weight of `|alpha|_2`. No default value is implied; callers must choose it.
    pub beta: f64,
    pub epochs: usize,
    pub lr: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for SsmFitConfig {
    fn default() -> Self {
        Self {
            beta: 0.0,
            epochs: 5000,
            lr: 0.005,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsmFit {
    pub alpha: Vec<f64>,
    pub b: Vec3,
    /// Objective at the returned iterate.
    pub loss: f64,
    /// Objective at every evaluated iterate, starting with `alpha = 0, b = 0`.
    pub history: Vec<f64>,
}

impl SsmFit {
    /// Running minimum of the history.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.history
            .iter()
            .scan(f64::INFINITY, |m, v| {
                *m = m.min(*v);
                Some(*m)
            })
            .collect()
    }
}

/// Objective value and gradient with respect to `(alpha, b)` at fixed
/// nearest-neighbour correspondences.
fn objective(
    model: &SsmModel,
    target: &[Vec3],
    alpha: &[f64],
    b: Vec3,
    beta: f64,
) -> Result<(f64, Vec<f64>)> {
    let inst = rows(&ssm_instance(model, alpha, b)?);
    let tree = KdTree::build(&inst);
    let m = target.len() as f64;
    let mut grad_pts = vec![[0.0; 3]; inst.len()];
    let mut data = 0.0;
    for y in target {
        let (d2, j) = tree.nearest_index(*y).expect("instance is nonempty");
        let d = d2.sqrt();
        data += d / m;
        if d > 0.0 {
            let g = vec3::scale(vec3::sub(inst[j], *y), 1.0 / (d * m));
            grad_pts[j] = vec3::add(grad_pts[j], g);
        }
    }
    let norm = alpha.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut grad = Vec::with_capacity(alpha.len() + 3);
    for ((v, l), a) in model.modes.iter().zip(&model.eigenvalues).zip(alpha) {
        let mut g = 0.0;
        for (row, gp) in v.rows().into_iter().zip(&grad_pts) {
            g += row[0] * gp[0] + row[1] * gp[1] + row[2] * gp[2];
        }
        g *= l;
        if norm > 0.0 {
            g += beta * a / norm;
        }
        grad.push(g);
    }
    for k in 0..3 {
        grad.push(grad_pts.iter().map(|g| g[k]).sum());
    }
    Ok((data + beta * norm, grad))
}

/// Adam over `(alpha, b)` from zero, recomputing correspondences every step.
/// Returns the best iterate seen.
pub fn ssm_fit(model: &SsmModel, target: &[Vec3], cfg: &SsmFitConfig) -> Result<SsmFit> {
    model.validate()?;
    if target.is_empty() {
        return Err(Error::Empty("target point cloud"));
    }
    if !(cfg.beta >= 0.0) || !(cfg.lr > 0.0) {
        return Err(Error::InvalidConfig("need beta >= 0 and lr > 0".into()));
    }
    let nm = model.n_modes();
    let mut theta = vec![0.0; nm + 3];
    let mut adam = Adam::new(theta.len(), cfg.adam);
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for step in 0..=cfg.epochs {
        let b = [theta[nm], theta[nm + 1], theta[nm + 2]];
        let (loss, grad) = objective(model, target, &theta[..nm], b, cfg.beta)?;
        if !loss.is_finite() || !grad.iter().all(|g| g.is_finite()) {
            return Err(Error::NumericalAbort {
                stage: "ssm-fit",
                step,
                term: "asymmetric chamfer objective".into(),
            });
        }
        history.push(loss);
        if best.as_ref().is_none_or(|(l, _)| loss < *l) {
            best = Some((loss, theta.clone()));
        }
        if step == cfg.epochs {
            break;
        }
        adam.step(&mut theta, &grad, cfg.lr);
    }
    let (loss, theta) = best.expect("at least one evaluation");
    Ok(SsmFit {
        alpha: theta[..nm].to_vec(),
        b: [theta[nm], theta[nm + 1], theta[nm + 2]],
        loss,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy() -> SsmModel {
        let mean = array![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 2.0, 0.0],
            [0.0, 0.0, 3.0]
        ];
        let v1 = array![
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 1.0, 1.0]
        ];
        SsmModel::new(mean, vec![v1], vec![0.5]).unwrap()
    }

    #[test]
    fn instance_examples() {
        let m = toy();
        assert_eq!(ssm_instance(&m, &[0.0], [0.0; 3]).unwrap(), m.mean);
        let shifted = ssm_instance(&m, &[0.0], [1.0, 2.0, 3.0]).unwrap();
        assert_eq!(shifted, &m.mean + &array![[1.0, 2.0, 3.0]]);
        let one = ssm_instance(&m, &[2.0], [0.0; 3]).unwrap();
        assert_eq!(one, &m.mean + &m.modes[0]);
        assert!(ssm_instance(&m, &[], [0.0; 3]).is_err());
    }

    #[test]
    fn zero_epochs_returns_origin() {
        let m = toy();
        let target = [[5.0, 5.0, 5.0]];
        let fit = ssm_fit(
            &m,
            &target,
            &SsmFitConfig {
                epochs: 0,
                ..SsmFitConfig::default()
            },
        )
        .unwrap();
        assert_eq!(fit.alpha, vec![0.0]);
        assert_eq!(fit.b, [0.0; 3]);
        assert_eq!(fit.history.len(), 1);
    }

    #[test]
    fn file_roundtrip_and_validation() {
        let m = toy();
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        assert_eq!(SsmModel::read(&buf[..]).unwrap(), m);
        buf.push(0);
        assert!(SsmModel::read(&buf[..]).is_err());
        assert!(SsmModel::new(m.mean.clone(), m.modes.clone(), vec![0.0]).is_err());
        assert!(ssm_fit(&m, &[], &SsmFitConfig::default()).is_err());
    }
}
