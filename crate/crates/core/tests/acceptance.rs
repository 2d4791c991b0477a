//! End-to-end acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits nonzero if any failed.
//!
//! The desk-scale atlas (criteria 2-5, 10, 11) trains three small networks and takes
//! roughly a quarter of an hour on one core.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdf_atlas::checkpoint::Checkpoint;
use sdf_atlas::completion::{
    complete, estimate_noise, surface_observations, CompletionConfig, NoiseLevel,
};
use sdf_atlas::geometry::grid::{evaluate_grid, VoxelGrid};
use sdf_atlas::geometry::marching_cubes::{extract_surfaces, marching_cubes};
use sdf_atlas::geometry::mesh::TriMesh;
use sdf_atlas::geometry::sampling::{
    face_probabilities, sample_faces, sample_training_points, SamplingConfig,
};
use sdf_atlas::geometry::synthetic::{make_synthetic_shapes, SyntheticShape};
use sdf_atlas::geometry::vec3::{self, Vec3};
use sdf_atlas::metrics::{asymmetric_chamfer, chamfer, hausdorff, lddmm_loss, mesh_to_points};
use sdf_atlas::net::{inf_norm, softplus_inv, Activation, NetworkConfig, NetworkParams};
use sdf_atlas::ssm::{ssm_fit, ssm_instance, SsmFitConfig, SsmModel};
use sdf_atlas::training::{
    loss_j, loss_j_gradient, train_with, LatentBank, ShapeSamples, TrainEvent, TrainOutput,
    TrainingConfig, TrainingSet,
};

const SEED: u64 = 0;
const N_TRAIN: usize = 8;
const N_HELD_OUT: usize = 2;
const GRID: [usize; 3] = [64; 3];
/// Points per mesh when measuring Chamfer distances.
const CD_SAMPLES: usize = 20_000;

struct Outcome {
    id: usize,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn run(id: usize, results: &mut Vec<Outcome>, f: impl FnOnce() -> (bool, String)) {
    let t = Instant::now();
    let (pass, detail) = f();
    let elapsed = t.elapsed();
    println!(
        "  [{}] criterion {id}: {} ({:.1} s)",
        if pass { "pass" } else { "FAIL" },
        detail,
        elapsed.as_secs_f64()
    );
    results.push(Outcome {
        id,
        pass,
        detail,
        elapsed,
    });
}

// ---------------------------------------------------------------------------
// Desk-scale atlas shared by several criteria.

fn desk_net() -> NetworkConfig {
    NetworkConfig {
        latent_dim: 8,
        hidden_layers: 3,
        hidden_width: 64,
        concat_layer: 2,
        ..NetworkConfig::default()
    }
}

fn desk_training() -> TrainingConfig {
    TrainingConfig {
        epochs: 300,
        lr_decay_epochs: vec![270, 290],
        batch_size: Some(4096),
        seed: SEED,
        ..TrainingConfig::default()
    }
}

fn desk_completion() -> CompletionConfig {
    CompletionConfig {
        opt_epochs: 2000,
        inv_sigma_sq: 3e-3,
        seed: SEED,
        ..CompletionConfig::default()
    }
}

struct AtlasRun {
    shapes: Vec<SyntheticShape>,
    set: TrainingSet,
    out: TrainOutput,
    /// `(epoch, checkpoint JSON)` for every checkpoint event.
    checkpoints: Vec<(usize, String)>,
    dataset_json: String,
    elapsed: Duration,
}

fn train_atlas(net: &NetworkConfig, cfg: &TrainingConfig) -> AtlasRun {
    let t = Instant::now();
    let shapes = make_synthetic_shapes(N_TRAIN + N_HELD_OUT, SEED).expect("synthetic shapes");
    let sampling = SamplingConfig {
        seed: SEED,
        ..SamplingConfig::default()
    };
    let samples: Vec<ShapeSamples> = shapes[..N_TRAIN]
        .iter()
        .map(|s| sample_training_points(&s.id, &s.meshes, &sampling).expect("sampling"))
        .collect();
    let set = TrainingSet { shapes: samples };
    let dataset_json = set.to_json().expect("dataset json");
    let mut checkpoints = Vec::new();
    let out = train_with(&set, net, cfg, |e| {
        if let TrainEvent::Checkpoint {
            epoch,
            params,
            bank,
        } = e
        {
            let json = Checkpoint::new(params, Some(bank))
                .to_json()
                .expect("checkpoint json");
            checkpoints.push((epoch, json));
        }
    })
    .expect("training");
    AtlasRun {
        shapes,
        set,
        out,
        checkpoints,
        dataset_json,
        elapsed: t.elapsed(),
    }
}

fn surface_cd(gt: &TriMesh, rec: &TriMesh) -> f64 {
    if rec.is_empty() {
        return f64::INFINITY;
    }
    let a = mesh_to_points(gt, CD_SAMPLES, 11).expect("gt points");
    let b = mesh_to_points(rec, CD_SAMPLES, 12).expect("reconstruction points");
    chamfer(&a, &b).expect("chamfer")
}

fn decode(
    params: &NetworkParams,
    z: &[f64],
    bbox: (Vec3, Vec3),
    dims: [usize; 3],
) -> (VoxelGrid, Vec<TriMesh>) {
    let g = evaluate_grid(params, z, bbox.0, bbox.1, dims).expect("grid");
    let meshes = extract_surfaces(&g).expect("marching cubes");
    (g, meshes)
}

/// Mean over training shapes of CD / diameter, per surface.
fn training_reconstruction(run: &AtlasRun) -> Vec<f64> {
    let bbox = run.set.bbox().expect("nonempty set");
    let n_surf = run.set.n_surfaces();
    let mut rel = vec![0.0; n_surf];
    for (i, shape) in run.shapes[..N_TRAIN].iter().enumerate() {
        let (_, meshes) = decode(&run.out.params, &run.out.bank.code(i), bbox, GRID);
        let d = shape.diameter();
        for j in 0..n_surf {
            rel[j] += surface_cd(&shape.meshes[j], &meshes[j]) / d / N_TRAIN as f64;
        }
    }
    rel
}

fn fmt_pct(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{:.2}%", 100.0 * x))
        .collect::<Vec<_>>()
        .join(", ")
}

// ---------------------------------------------------------------------------
// Criterion 1: finite-difference check of the loss_J gradient.

fn random_instance(
    rng: &mut ChaCha8Rng,
    i: usize,
) -> (NetworkParams, LatentBank, TrainingSet, f64, f64) {
    let hidden_layers = rng.random_range(1..=3);
    let lipschitz = i % 5 != 4;
    let cfg = NetworkConfig {
        latent_dim: rng.random_range(1..=3),
        hidden_layers,
        hidden_width: rng.random_range(2..=5),
        n_surfaces: rng.random_range(1..=4),
        concat_layer: rng.random_range(1..=hidden_layers),
        coord_scale: 100.0,
        length_unit: 1000.0,
        activation: if i % 3 == 2 {
            Activation::Relu
        } else {
            Activation::Tanh
        },
        lipschitz_enabled: lipschitz,
    };
    let mut params = NetworkParams::init(cfg.clone(), rng).expect("init");
    for layer in &mut params.layers {
        layer.b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        if layer.c.is_some() {
            // Move away from the tie at init so both clamp branches are exercised.
            let norm = inf_norm(&layer.w).0;
            layer.c = Some(softplus_inv(norm * rng.random_range(0.3..1.7)));
        }
    }
    let n_shapes = rng.random_range(1..=3);
    let shapes = (0..n_shapes)
        .map(|s| {
            let k = rng.random_range(1..=6);
            ShapeSamples {
                id: format!("s{s}"),
                points: Array2::from_shape_fn((k, 3), |_| rng.random_range(-50.0..50.0)),
                distances: Array2::from_shape_fn((k, cfg.n_surfaces), |_| {
                    rng.random_range(-2.0..2.0)
                }),
            }
        })
        .collect();
    let bank = LatentBank {
        codes: Array2::from_shape_fn((n_shapes, cfg.latent_dim), |_| rng.random_range(-1.0..1.0)),
    };
    let inv_sigma_sq = rng.random_range(0.01..1.0);
    let alpha = if lipschitz {
        rng.random_range(0.0..0.5)
    } else {
        0.0
    };
    (params, bank, TrainingSet { shapes }, inv_sigma_sq, alpha)
}

/// `|a - n| / max(|a|, |n|, 1e-5)`; the floor keeps rounding noise on vanishing
/// components from dominating.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
}

fn criterion_1() -> (bool, String) {
    const H: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut n_components = 0;
    let n_instances = 24;
    for i in 0..n_instances {
        let (params, bank, set, inv_sigma_sq, alpha) = random_instance(&mut rng, i);
        let cfg = TrainingConfig {
            inv_sigma_sq,
            alpha,
            ..TrainingConfig::default()
        };
        let (_, g, gz) = loss_j_gradient(&params, &bank, &set, &cfg).expect("gradient");
        let analytic = g.to_flat();
        let theta = params.to_flat();
        let mut p = params.clone();
        for (k, a) in analytic.iter().enumerate() {
            let mut t = theta.clone();
            t[k] = theta[k] + H;
            p.set_flat(&t).unwrap();
            let up = loss_j(&p, &bank, &set, inv_sigma_sq, alpha).unwrap();
            t[k] = theta[k] - H;
            p.set_flat(&t).unwrap();
            let down = loss_j(&p, &bank, &set, inv_sigma_sq, alpha).unwrap();
            worst = worst.max(rel_err(*a, (up - down) / (2.0 * H)));
            n_components += 1;
        }
        for idx in 0..bank.codes.len() {
            let mut b = bank.clone();
            let flat = b.codes.as_slice_mut().unwrap();
            flat[idx] += H;
            let up = loss_j(&params, &b, &set, inv_sigma_sq, alpha).unwrap();
            b.codes.as_slice_mut().unwrap()[idx] -= 2.0 * H;
            let down = loss_j(&params, &b, &set, inv_sigma_sq, alpha).unwrap();
            worst = worst.max(rel_err(
                gz.as_slice().unwrap()[idx],
                (up - down) / (2.0 * H),
            ));
            n_components += 1;
        }
    }
    (
        worst < 1e-4,
        format!(
            "{n_instances} instances, {n_components} components, max rel err {worst:.2e} (< 1e-4)"
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 2: sampled Lipschitz inequality for every checkpoint.

fn lipschitz_check(params: &NetworkParams, n_pairs: usize, seed: u64) -> (bool, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = params.lipschitz_bound();
    let jd = params.config.joint_dim();
    let mut worst_ratio: f64 = 0.0;
    let mut ok = true;
    for p in 0..n_pairs {
        let u: Vec<f64> = (0..jd)
            .map(|k| {
                if k < 3 {
                    rng.random_range(-8.0..8.0)
                } else {
                    rng.random_range(-2.5..2.5)
                }
            })
            .collect();
        let v: Vec<f64> = if p % 2 == 0 {
            let scale = 10f64.powf(rng.random_range(-5.0..0.0));
            u.iter()
                .map(|x| x + scale * rng.random_range(-1.0..1.0))
                .collect()
        } else {
            (0..jd)
                .map(|k| {
                    if k < 3 {
                        rng.random_range(-8.0..8.0)
                    } else {
                        rng.random_range(-2.5..2.5)
                    }
                })
                .collect()
        };
        let fu = params.forward_joint(&u).unwrap();
        let fv = params.forward_joint(&v).unwrap();
        let df = fu
            .iter()
            .zip(&fv)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let du = u
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if df > bound * du + 1e-9 {
            ok = false;
        }
        if du > 0.0 {
            worst_ratio = worst_ratio.max(df / du / bound);
        }
    }
    (ok, worst_ratio)
}

fn criterion_2(checkpoints: &[(String, String)]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, (name, json)) in checkpoints.iter().enumerate() {
        let params = Checkpoint::from_json(json).unwrap().params().unwrap();
        if !params.config.lipschitz_enabled {
            continue;
        }
        let (pass, ratio) = lipschitz_check(&params, 10_000, 200 + i as u64);
        ok &= pass;
        parts.push(format!("{name}: max |df|/(L|du|) = {ratio:.3}"));
    }
    (
        ok && !parts.is_empty(),
        format!(
            "{} checkpoints x 1e4 pairs; {}",
            parts.len(),
            parts.join("; ")
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 3 and the training-operation examples.

fn criterion_3(run: &AtlasRun, rel: &[f64], extract_time: Duration) -> (bool, String) {
    let total = run.elapsed + extract_time;
    let worst = rel.iter().cloned().fold(0.0, f64::max);
    let last = run.out.history.last().expect("nonempty history");
    // Training example: data loss and smoothed loss_J trend.
    let losses: Vec<f64> = run.out.history.iter().map(|r| r.loss_j()).collect();
    let avg: Vec<f64> = losses
        .windows(10)
        .map(|w| w.iter().sum::<f64>() / 10.0)
        .collect();
    let increases = avg.windows(2).filter(|w| w[1] > w[0]).count();
    // Forward example: stored surface-1 points decode near zero in channel 1.
    let mut s1 = Vec::new();
    for (i, shape) in run.set.shapes.iter().enumerate() {
        let z = run.out.bank.code(i);
        for r in 0..shape.len() {
            if shape.distances[[r, 0]] == 0.0 || shape.distances[[r, 0]].abs() < 1e-9 {
                let p = shape.points.row(r);
                let out = run.out.params.forward(&[p[0], p[1], p[2]], &z).unwrap();
                s1.push(out.0[0].abs());
            }
        }
    }
    s1.sort_by(f64::total_cmp);
    let s1_mean = s1.iter().sum::<f64>() / s1.len() as f64;
    let s1_p95 = s1[(0.95 * s1.len() as f64) as usize];
    let pass = worst < 0.02 && total < Duration::from_secs(15 * 60);
    (
        pass,
        format!(
            "CD/diameter per surface [{}] (< 2%), runtime {:.0} s (< 900 s); final data loss {:.3} mm^2, \
             10-epoch average of loss_J rose in {increases}/{} steps; |s1| at stored surface-1 points: mean {:.3} mm, p95 {:.3} mm",
            fmt_pct(rel),
            total.as_secs_f64(),
            last.data,
            avg.len().saturating_sub(1),
            s1_mean,
            s1_p95,
        ),
    )
}

// ---------------------------------------------------------------------------
// Criteria 4 and 5: completion and noise estimation on held-out shapes.

fn criterion_4(run: &AtlasRun) -> (bool, String) {
    let bbox = run.set.bbox().unwrap();
    let cfg = desk_completion();
    let mut ok = true;
    let mut parts = Vec::new();
    for (h, shape) in run.shapes[N_TRAIN..].iter().enumerate() {
        let d = shape.diameter();
        for (xi, limit) in [(0.0, 0.05), (2.0, 0.10)] {
            let obs = surface_observations(&shape.meshes[0], 1, 50, xi, 40 + h as u64).unwrap();
            let c = complete(&run.out.params, &obs, &cfg, xi, None).unwrap();
            let (grid, meshes) = decode(&run.out.params, &c.z, bbox, GRID);
            let finite = grid.channels.iter().flatten().all(|v| v.is_finite());
            let closed = meshes
                .iter()
                .all(|m| !m.is_empty() && m.check_watertight().is_ok());
            let rel = surface_cd(&shape.meshes[0], &meshes[0]) / d;
            ok &= rel < limit && (xi > 0.0 || (finite && closed));
            parts.push(format!(
                "{} xi={xi}: CD {:.2}% (< {:.0}%), finite {finite}, closed {closed}",
                shape.id,
                100.0 * rel,
                100.0 * limit
            ));
        }
    }
    (ok, parts.join("; "))
}

fn criterion_5(run: &AtlasRun) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for (h, shape) in run.shapes[N_TRAIN..].iter().enumerate() {
        let obs = surface_observations(&shape.meshes[0], 1, 200, 2.0, 60 + h as u64).unwrap();
        let mut finals = Vec::new();
        for start in [0.0, 10.0] {
            let cfg = CompletionConfig {
                noise: NoiseLevel::Estimate,
                noise_init: start,
                ..desk_completion()
            };
            let est = estimate_noise(&run.out.params, &obs, &cfg).unwrap();
            // Iterate 6 (or the last one, if the loop stopped earlier) must be in range.
            let at6 = est.iterates[est.iterates.len().min(7) - 1];
            ok &= (1.6..=2.4).contains(&est.xi) && (1.6..=2.4).contains(&at6);
            let its: Vec<String> = est.iterates.iter().map(|v| format!("{v:.3}")).collect();
            parts.push(format!("{} from {start}: [{}]", shape.id, its.join(", ")));
            finals.push(est.xi);
        }
        ok &= (finals[0] - finals[1]).abs() < 0.1;
    }
    (
        ok,
        format!(
            "estimates in [1.6, 2.4], starts agree within 0.1; {}",
            parts.join("; ")
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 6: metric oracles.

fn brute_directed(a: &[Vec3], b: &[Vec3]) -> Vec<f64> {
    a.iter()
        .map(|p| {
            let mut best = f64::INFINITY;
            for q in b {
                let d =
                    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
                best = best.min(d);
            }
            best
        })
        .collect()
}

fn brute_lddmm(a: &TriMesh, b: &TriMesh, gamma: f64) -> f64 {
    let faces = |m: &TriMesh| -> Vec<(Vec3, Vec3)> {
        m.faces()
            .iter()
            .map(|f| {
                let [p, q, r] = f.map(|i| m.vertices()[i]);
                let c = [0, 1, 2].map(|k| (p[k] + q[k] + r[k]) / 3.0);
                let e1 = [q[0] - p[0], q[1] - p[1], q[2] - p[2]];
                let e2 = [r[0] - p[0], r[1] - p[1], r[2] - p[2]];
                let n = [
                    0.5 * (e1[1] * e2[2] - e1[2] * e2[1]),
                    0.5 * (e1[2] * e2[0] - e1[0] * e2[2]),
                    0.5 * (e1[0] * e2[1] - e1[1] * e2[0]),
                ];
                (c, n)
            })
            .collect()
    };
    let inner = |x: &[(Vec3, Vec3)], y: &[(Vec3, Vec3)]| {
        let mut s = 0.0;
        for (cx, nx) in x {
            for (cy, ny) in y {
                let d2 = (0..3).map(|k| (cx[k] - cy[k]).powi(2)).sum::<f64>();
                s += (-gamma * d2).exp() * (nx[0] * ny[0] + nx[1] * ny[1] + nx[2] * ny[2]);
            }
        }
        s
    };
    let (fa, fb) = (faces(a), faces(b));
    inner(&fa, &fa) + inner(&fb, &fb) - 2.0 * inner(&fa, &fb)
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
    let spread = rng.random_range(0.1..50.0);
    (0..n)
        .map(|_| [0; 3].map(|_| rng.random_range(-spread..spread)))
        .collect()
}

fn random_soup(rng: &mut ChaCha8Rng) -> TriMesh {
    let nf = rng.random_range(1..=25);
    let mut v = Vec::new();
    let mut f = Vec::new();
    for i in 0..nf {
        let c: Vec3 = [0; 3].map(|_| rng.random_range(-3.0..3.0));
        for _ in 0..3 {
            v.push(vec3::add(c, [0; 3].map(|_| rng.random_range(-1.0..1.0))));
        }
        f.push([3 * i, 3 * i + 1, 3 * i + 2]);
    }
    TriMesh::new(v, f).expect("random triangles are nondegenerate")
}

fn criterion_6() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let n = 60;
    let (mut e_cd, mut e_hd, mut e_acd, mut e_ld): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    let mut zero_ok = true;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-300);
    for _ in 0..n {
        let na = rng.random_range(1..300);
        let nb = rng.random_range(1..300);
        let a = random_cloud(&mut rng, na);
        let b = random_cloud(&mut rng, nb);
        let ab = brute_directed(&a, &b);
        let ba = brute_directed(&b, &a);
        e_cd = e_cd.max(rel(chamfer(&a, &b).unwrap(), mean(&ab) + mean(&ba)));
        let hd = ab.iter().chain(&ba).cloned().fold(0.0, f64::max);
        e_hd = e_hd.max(rel(hausdorff(&a, &b).unwrap(), hd));
        e_acd = e_acd.max(rel(asymmetric_chamfer(&a, &b).unwrap(), mean(&ab)));
        zero_ok &= chamfer(&a, &a).unwrap() == 0.0
            && hausdorff(&a, &a).unwrap() == 0.0
            && asymmetric_chamfer(&a, &a).unwrap() == 0.0;

        let ma = random_soup(&mut rng);
        let mb = random_soup(&mut rng);
        let gamma = rng.random_range(0.05..2.0);
        let fast = lddmm_loss(&ma, &mb, gamma).unwrap();
        let slow = brute_lddmm(&ma, &mb, gamma);
        // Cancellation in C(a,a) + C(b,b) - 2 C(a,b): compare against the term scale.
        let scale = brute_lddmm(&ma, &ma.flipped(), gamma).abs()
            + brute_lddmm(&mb, &mb.flipped(), gamma).abs();
        e_ld = e_ld.max((fast - slow).abs() / scale.max(1e-300));
        zero_ok &= lddmm_loss(&ma, &ma, gamma).unwrap() == 0.0;
    }
    let pass = e_cd < 1e-12 && e_hd < 1e-12 && e_acd < 1e-12 && e_ld < 1e-10 && zero_ok;
    (
        pass,
        format!(
            "{n} instances; max rel err chamfer {e_cd:.1e}, hausdorff {e_hd:.1e}, asymmetric {e_acd:.1e} (< 1e-12), \
             lddmm {e_ld:.1e} (< 1e-10); identical inputs give exactly 0: {zero_ok}"
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 7: marching cubes.

fn canonical(f: [usize; 3]) -> [usize; 3] {
    let r = (0..3).min_by_key(|&k| f[k]).unwrap();
    [f[r], f[(r + 1) % 3], f[(r + 2) % 3]]
}

fn criterion_7() -> (bool, String) {
    let n = 64;
    let h = 80.0 / (n - 1) as f64;
    let grid = VoxelGrid::from_fn([-40.0; 3], [h; 3], [n; 3], 1, |p| {
        vec![vec3::norm(p) - 30.0]
    })
    .unwrap();
    let m = marching_cubes(&grid, 0, 0.0).unwrap();
    let diag = grid.cell_diagonal();
    let worst = m
        .vertices()
        .iter()
        .map(|v| (vec3::norm(*v) - 30.0).abs())
        .fold(0.0, f64::max);

    let mut neg = grid.clone();
    neg.channels[0].iter_mut().for_each(|v| *v = -*v);
    let mn = marching_cubes(&neg, 0, 0.0).unwrap();
    let key = |m: &TriMesh| {
        let mut v: Vec<[u64; 3]> = m.vertices().iter().map(|p| p.map(f64::to_bits)).collect();
        v.sort();
        v
    };
    let same_vertices = key(&m) == key(&mn);
    let mut fa: Vec<[usize; 3]> = m
        .faces()
        .iter()
        .map(|f| canonical([f[0], f[2], f[1]]))
        .collect();
    let id_of: std::collections::HashMap<[u64; 3], usize> = m
        .vertices()
        .iter()
        .enumerate()
        .map(|(i, p)| (p.map(f64::to_bits), i))
        .collect();
    let mut fb: Vec<[usize; 3]> = mn
        .faces()
        .iter()
        .map(|f| {
            canonical(f.map(|i| {
                id_of
                    .get(&mn.vertices()[i].map(f64::to_bits))
                    .copied()
                    .unwrap_or(usize::MAX)
            }))
        })
        .collect();
    fa.sort();
    fb.sort();
    let opposite = fa == fb;
    let outward = m.signed_volume() > 0.0;
    (
        !m.is_empty() && worst < diag && same_vertices && opposite && outward,
        format!(
            "{} vertices, max | |v| - 30 | = {worst:.3} (< cell diagonal {diag:.3}); negated field: same vertices {same_vertices}, \
             every face reversed {opposite}; normals outward {outward}",
            m.vertices().len()
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 8: curvature-weighted sampling.

fn criterion_8() -> (bool, String) {
    let mesh = TriMesh::ellipsoid([0.0; 3], [10.0, 15.0, 30.0], 1).unwrap();
    let p = face_probabilities(&mesh, 0.1, 0.75).unwrap();
    let draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut counts = vec![0usize; p.len()];
    for f in sample_faces(&p, draws, &mut rng).unwrap() {
        counts[f] += 1;
    }
    let mut worst_z: f64 = 0.0;
    for (c, q) in counts.iter().zip(&p) {
        let mean = draws as f64 * q;
        let sd = (draws as f64 * q * (1.0 - q)).sqrt();
        worst_z = worst_z.max((*c as f64 - mean).abs() / sd);
    }
    let shape = &make_synthetic_shapes(1, SEED).unwrap()[0];
    let s = sample_training_points(&shape.id, &shape.meshes, &SamplingConfig::default()).unwrap();
    (
        worst_z <= 3.0 && s.len() == 16_000,
        format!(
            "{} faces, 1e5 draws, max |count - n p| / sigma = {worst_z:.2} (<= 3); default config gives {} points per 4-surface shape",
            p.len(),
            s.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 9: SSM self-consistency.

fn criterion_9() -> (bool, String) {
    let base = TriMesh::ellipsoid([0.0; 3], [20.0, 25.0, 35.0], 2).unwrap();
    let pts = base.vertices();
    let n = pts.len();
    let mean = Array2::from_shape_fn((n, 3), |(i, k)| pts[i][k]);
    // Smooth modes: an axial stretch and a bend.
    let v1 = Array2::from_shape_fn((n, 3), |(i, k)| if k == 2 { pts[i][2] / 35.0 } else { 0.0 });
    let v2 = Array2::from_shape_fn((n, 3), |(i, k)| {
        if k == 0 {
            (pts[i][2] / 35.0).powi(2)
        } else {
            0.0
        }
    });
    let model = SsmModel::new(mean, vec![v1, v2], vec![4.0, 2.5]).unwrap();
    let alpha_star = [0.6, -0.8];
    let b_star = [1.5, -2.0, 0.7];
    let target_arr = ssm_instance(&model, &alpha_star, b_star).unwrap();
    let target: Vec<Vec3> = target_arr
        .rows()
        .into_iter()
        .map(|r| [r[0], r[1], r[2]])
        .collect();
    let fit = ssm_fit(
        &model,
        &target,
        &SsmFitConfig {
            beta: 0.0,
            seed: SEED,
            ..SsmFitConfig::default()
        },
    )
    .unwrap();
    let inst = ssm_instance(&model, &fit.alpha, fit.b).unwrap();
    let inst: Vec<Vec3> = inst
        .rows()
        .into_iter()
        .map(|r| [r[0], r[1], r[2]])
        .collect();
    let acd = asymmetric_chamfer(&target, &inst).unwrap();
    let scale = model.scale();
    (
        acd < 0.01 * scale,
        format!(
            "aCD {acd:.4} vs model scale {scale:.1} (< 1%); alpha {:?} (true {alpha_star:?}), b {:?}",
            fit.alpha.iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>(),
            fit.b.map(|v| (v * 1e3).round() / 1e3)
        ),
    )
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    println!("acceptance suite");
    let mut results = Vec::new();
    run(1, &mut results, criterion_1);
    run(6, &mut results, criterion_6);
    run(7, &mut results, criterion_7);
    run(8, &mut results, criterion_8);
    run(9, &mut results, criterion_9);

    println!("  training the desk-scale atlas (this takes several minutes)");
    let atlas = train_atlas(&desk_net(), &desk_training());
    let t = Instant::now();
    let rel = training_reconstruction(&atlas);
    let extract_time = t.elapsed();
    run(3, &mut results, || criterion_3(&atlas, &rel, extract_time));

    run(4, &mut results, || criterion_4(&atlas));
    run(5, &mut results, || criterion_5(&atlas));

    println!("  retraining with the same configuration");
    let again = train_atlas(&desk_net(), &desk_training());
    run(10, &mut results, || {
        let same_data = again.dataset_json == atlas.dataset_json;
        let same_ckpt = again.checkpoints == atlas.checkpoints;
        (
            same_data && same_ckpt,
            format!(
                "dataset identical {same_data}; {} checkpoints (epochs {:?}) byte-identical {same_ckpt}",
                atlas.checkpoints.len(),
                atlas.checkpoints.iter().map(|c| c.0).collect::<Vec<_>>()
            ),
        )
    });

    println!("  training the unregularized ablation");
    let ablation_cfg = TrainingConfig {
        alpha: 0.0,
        ..desk_training()
    };
    let ablation = train_atlas(&desk_net().unregularized(), &ablation_cfg);
    run(11, &mut results, || {
        let rel = training_reconstruction(&ablation);
        (
            rel.iter().all(|v| v.is_finite()),
            format!(
                "alpha = 0, relu, plain layers: CD/diameter per surface [{}]",
                fmt_pct(&rel)
            ),
        )
    });

    let mut all_checkpoints: Vec<(String, String)> = Vec::new();
    for (tag, r) in [
        ("atlas", &atlas),
        ("repeat", &again),
        ("ablation", &ablation),
    ] {
        for (epoch, json) in &r.checkpoints {
            all_checkpoints.push((format!("{tag}@{epoch}"), json.clone()));
        }
    }
    run(2, &mut results, || criterion_2(&all_checkpoints));

    results.sort_by_key(|r| r.id);
    println!();
    println!("acceptance summary");
    for r in &results {
        println!(
            "criterion {:>2}: {} ({:.1} s) {}",
            r.id,
            if r.pass { "PASS" } else { "FAIL" },
            r.elapsed.as_secs_f64(),
            r.detail
        );
    }
    let failed = results.iter().filter(|r| !r.pass).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
