use std::io::{BufRead, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::vec3::Vec3;
use crate::net::NetworkParams;

/// Fraction of the box extent added on every side before sampling the lattice.
pub const GRID_PADDING: f64 = 0.05;

/// Scalar fields on a regular lattice, one channel per surface.
///
/// Values are stored x-fastest: `index = i + nx * (j + ny * k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub origin: Vec3,
    pub spacing: Vec3,
    pub dims: [usize; 3],
    pub channels: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct GridHeader {
    origin: Vec3,
    spacing: Vec3,
    dims: [usize; 3],
    channels: usize,
    layout: String,
}

const LAYOUT: &str = "channel-major, x-fastest, f64 little-endian";

impl VoxelGrid {
    pub fn n_points(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        [
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        ]
    }

    pub fn cell_diagonal(&self) -> f64 {
        self.spacing.iter().map(|s| s * s).sum::<f64>().sqrt()
    }

    fn lattice(origin: Vec3, spacing: Vec3, dims: [usize; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidConfig(
                "grid needs at least 2 points per axis".into(),
            ));
        }
        if !spacing.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidConfig("grid spacing must be positive".into()));
        }
        Ok(Self {
            origin,
            spacing,
            dims,
            channels: Vec::new(),
        })
    }

    /// Fills every channel from `f(point) -> values`.
    pub fn from_fn<F>(
        origin: Vec3,
        spacing: Vec3,
        dims: [usize; 3],
        n_channels: usize,
        mut f: F,
    ) -> Result<Self>
    where
        F: FnMut(Vec3) -> Vec<f64>,
    {
        let mut g = Self::lattice(origin, spacing, dims)?;
        g.channels = vec![Vec::with_capacity(g.n_points()); n_channels];
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let v = f(g.point(i, j, k));
                    if v.len() != n_channels {
                        return Err(Error::dims("grid function output", n_channels, v.len()));
                    }
                    for (c, x) in v.into_iter().enumerate() {
                        g.channels[c].push(x);
                    }
                }
            }
        }
        g.check_finite()?;
        Ok(g)
    }

    fn check_finite(&self) -> Result<()> {
        if self.channels.iter().flatten().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("grid values".into()))
        }
    }

    /// Writes a one-line JSON header followed by the raw values.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let header = GridHeader {
            origin: self.origin,
            spacing: self.spacing,
            dims: self.dims,
            channels: self.channels.len(),
            layout: LAYOUT.into(),
        };
        let io = |e| Error::io("<grid stream>", e);
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n").map_err(io)?;
        for ch in &self.channels {
            for v in ch {
                out.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: BufRead>(mut input: R) -> Result<Self> {
        let io = |e| Error::io("<grid stream>", e);
        let mut line = String::new();
        input.read_line(&mut line).map_err(io)?;
        let h: GridHeader = serde_json::from_str(line.trim_end())?;
        let mut g = Self::lattice(h.origin, h.spacing, h.dims)?;
        let n = g.n_points();
        let mut buf = [0u8; 8];
        for _ in 0..h.channels {
            let mut ch = Vec::with_capacity(n);
            for _ in 0..n {
                input.read_exact(&mut buf).map_err(io)?;
                ch.push(f64::from_le_bytes(buf));
            }
            g.channels.push(ch);
        }
        g.check_finite()?;
        Ok(g)
    }
}

/// Pads `(min, max)` by [`GRID_PADDING`] of the extent on every side.
pub fn padded_box(min: Vec3, max: Vec3) -> (Vec3, Vec3) {
    let mut lo = min;
    let mut hi = max;
    for k in 0..3 {
        let pad = GRID_PADDING * (max[k] - min[k]);
        lo[k] -= pad;
        hi[k] += pad;
    }
    (lo, hi)
}

/// Lattice of `dims` points spanning the padded box, corners included.
pub fn lattice_for_box(min: Vec3, max: Vec3, dims: [usize; 3]) -> Result<(Vec3, Vec3)> {
    if dims.iter().any(|&d| d < 2) {
        return Err(Error::InvalidConfig(
            "grid needs at least 2 points per axis".into(),
        ));
    }
    let (lo, hi) = padded_box(min, max);
    let spacing = [0, 1, 2].map(|k| (hi[k] - lo[k]) / (dims[k] - 1) as f64);
    Ok((lo, spacing))
}

/// Evaluates the decoder at every lattice point of the padded box.
pub fn evaluate_grid(
    params: &NetworkParams,
    z: &[f64],
    min: Vec3,
    max: Vec3,
    dims: [usize; 3],
) -> Result<VoxelGrid> {
    let (origin, spacing) = lattice_for_box(min, max, dims)?;
    let mut g = VoxelGrid::lattice(origin, spacing, dims)?;
    let n = g.n_points();
    let n_out = params.config.n_surfaces;
    let joint_dim = params.config.joint_dim();
    let scale = params.config.input_scale();
    if z.len() != params.config.latent_dim {
        return Err(Error::dims(
            "latent code",
            params.config.latent_dim,
            z.len(),
        ));
    }
    g.channels = vec![Vec::with_capacity(n); n_out];
    // One z-slab at a time keeps the batch small.
    let slab = dims[0] * dims[1];
    for k in 0..dims[2] {
        let mut joint = Array2::zeros((slab, joint_dim));
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let r = i + dims[0] * j;
                let p = g.point(i, j, k);
                for a in 0..3 {
                    joint[[r, a]] = p[a] * scale;
                }
                for (a, v) in z.iter().enumerate() {
                    joint[[r, 3 + a]] = *v;
                }
            }
        }
        let out = params.forward_batch(joint.view())?;
        for r in 0..slab {
            for c in 0..n_out {
                g.channels[c].push(out[[r, c]]);
            }
        }
    }
    g.check_finite()?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetworkConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_net_and_corner_grid() {
        let cfg = NetworkConfig {
            latent_dim: 2,
            hidden_layers: 2,
            concat_layer: 2,
            hidden_width: 4,
            ..NetworkConfig::default()
        };
        let mut p = NetworkParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let last = p.layers.last_mut().unwrap();
        last.w.fill(0.0);
        last.b.fill(2.5);
        let g = evaluate_grid(&p, &[0.1, 0.2], [0.0; 3], [10.0, 20.0, 30.0], [2, 2, 2]).unwrap();
        assert_eq!(g.n_points(), 8);
        assert!(g.channels.iter().flatten().all(|v| *v == 2.5));
        assert_eq!(g.point(0, 0, 0), [-0.5, -1.0, -1.5]);
        assert_eq!(g.point(1, 1, 1), [10.5, 21.0, 31.5]);
    }

    #[test]
    fn binary_roundtrip() {
        let g = VoxelGrid::from_fn([1.0, 2.0, 3.0], [0.5, 0.25, 1.0], [3, 4, 2], 2, |p| {
            vec![p[0] * p[1], -p[2]]
        })
        .unwrap();
        let mut buf = Vec::new();
        g.write_binary(&mut buf).unwrap();
        let back = VoxelGrid::read_binary(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn rejects_tiny_dims() {
        assert!(VoxelGrid::from_fn([0.0; 3], [1.0; 3], [1, 2, 2], 1, |_| vec![0.0]).is_err());
    }
}
