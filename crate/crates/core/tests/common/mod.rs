#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdf_atlas::net::{inf_norm, softplus_inv, Activation, NetworkConfig, NetworkParams};
use sdf_atlas::training::{LatentBank, ShapeSamples, TrainingSet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn small_config(activation: Activation, lipschitz: bool) -> NetworkConfig {
    NetworkConfig {
        latent_dim: 3,
        hidden_layers: 3,
        hidden_width: 8,
        n_surfaces: 4,
        concat_layer: 2,
        activation,
        lipschitz_enabled: lipschitz,
        ..NetworkConfig::default()
    }
}

pub fn small_params(activation: Activation, lipschitz: bool, seed: u64) -> NetworkParams {
    let mut r = rng(seed);
    let mut p = NetworkParams::init(small_config(activation, lipschitz), &mut r).unwrap();
    for l in &mut p.layers {
        l.b.mapv_inplace(|_| r.random_range(-0.3..0.3));
        // `init` puts softplus(c) exactly on the norm, the kink of the rescaling.
        if let Some(c) = l.c.as_mut() {
            *c = softplus_inv(inf_norm(&l.w).0 * r.random_range(0.5..1.5));
        }
    }
    p
}

/// Random points in a 100 mm box with made-up target distances.
pub fn random_set(n_shapes: usize, k: usize, seed: u64) -> TrainingSet {
    let mut r = rng(seed);
    TrainingSet {
        shapes: (0..n_shapes)
            .map(|i| ShapeSamples {
                id: format!("s{i}"),
                points: Array2::from_shape_fn((k, 3), |_| r.random_range(-50.0..50.0)),
                distances: Array2::from_shape_fn((k, 4), |_| r.random_range(-20.0..20.0)),
            })
            .collect(),
    }
}

pub fn random_bank(n: usize, d: usize, seed: u64) -> LatentBank {
    let mut r = rng(seed);
    LatentBank {
        codes: Array2::from_shape_fn((n, d), |_| r.random_range(-1.0..1.0)),
    }
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
