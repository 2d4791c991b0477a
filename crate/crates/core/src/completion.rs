//! Latent-code inference from sparse surface observations.
//!
//! With the decoder frozen, the code of an unseen shape is the minimizer of
//!
//! ```text
//! (1/K) sum_k (f(x_k, z)_{j_k} - s_k)^2 + (beta / sigma^2) |z|^2
//! ```
//!
//! where `beta = 1` for noise-free input and `max(1, C_b xi^2)` for noise level `xi`.
//! When `xi` is unknown it is estimated by a fixed-point iteration on the
//! empirical residual variance.

use std::io::{Read, Write};

use log::warn;
use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::mesh::TriMesh;
use crate::metrics::mesh_to_points;
use crate::net::NetworkParams;
use crate::optim::{Adam, AdamConfig};
use crate::rng::rng_for;
use crate::training::sample_prior;

/// One observed point: position, signed distance and 1-based surface index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: [f64; 3],
    pub s: f64,
    pub surface: usize,
}

impl Observation {
    pub fn on_surface(x: [f64; 3], surface: usize) -> Self {
        Self { x, s: 0.0, surface }
    }
}

pub fn write_observations_csv<W: Write>(obs: &[Observation], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::parse("observation output", e.to_string());
    w.write_record(["x", "y", "z", "s", "surface"])
        .map_err(err)?;
    for o in obs {
        w.serialize((o.x[0], o.x[1], o.x[2], o.s, o.surface))
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("<observations>", e))
}

/// Parses `x,y,z,s,surface` rows (header required, surface 1-based).
pub fn read_observations_csv<R: Read>(input: R) -> Result<Vec<Observation>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::parse("observation header", e.to_string()))?
        .iter()
        .map(str::to_ascii_lowercase)
        .collect();
    if header.is_empty() || header == [""] {
        return Err(Error::Empty("observation file"));
    }
    if header != ["x", "y", "z", "s", "surface"] {
        return Err(Error::parse(
            "observation header",
            "expected x,y,z,s,surface",
        ));
    }
    let mut obs = Vec::new();
    for (i, row) in rdr.deserialize::<(f64, f64, f64, f64, usize)>().enumerate() {
        let ctx = || format!("observation row {}", i + 1);
        let (x, y, z, s, surface) = row.map_err(|e| Error::parse(ctx(), e.to_string()))?;
        if ![x, y, z, s].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(ctx()));
        }
        obs.push(Observation {
            x: [x, y, z],
            s,
            surface,
        });
    }
    Ok(obs)
}

/// `n` area-uniform points on `mesh`, each coordinate perturbed by `Normal(0, xi^2)`,
/// labelled as on-surface observations of `surface`.
pub fn surface_observations(
    mesh: &TriMesh,
    surface: usize,
    n: usize,
    xi: f64,
    seed: u64,
) -> Result<Vec<Observation>> {
    if !(xi >= 0.0) {
        return Err(Error::InvalidConfig(
            "noise level must be nonnegative".into(),
        ));
    }
    let pts = mesh_to_points(mesh, n, seed)?;
    let mut rng = rng_for(seed, "observation-noise");
    let normal = Normal::new(0.0, xi).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok(pts
        .into_iter()
        .map(|p| Observation::on_surface(p.map(|c| c + normal.sample(&mut rng)), surface))
        .collect())
}

/// Noise level of the observations: known, or to be estimated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLevel {
    Known(f64),
    Estimate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentInit {
    Zero,
    /// Draw from `Normal(0, sigma^2)` using the config seed.
    Prior {
        sigma: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompletionConfig {
    pub beta_scale: f64,
    pub noise: NoiseLevel,
    /// Starting estimate for the noise fixed point, mm.
    pub noise_init: f64,
    pub max_noise_iters: usize,
    pub noise_tol: f64,
    pub opt_epochs: usize,
    pub opt_lr: f64,
    /// Prior weight `1 / sigma^2` of the trained model.
    pub inv_sigma_sq: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub z_init: LatentInit,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self {
            beta_scale: 100.0,
            noise: NoiseLevel::Known(0.0),
            noise_init: 0.0,
            max_noise_iters: 10,
            noise_tol: 1e-3,
            opt_epochs: 50_000,
            opt_lr: 1e-2,
            inv_sigma_sq: 1.8e-7,
            adam: AdamConfig::default(),
            seed: 0,
            z_init: LatentInit::Zero,
        }
    }
}

impl CompletionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.opt_epochs == 0 {
            return Err(Error::InvalidConfig("opt_epochs must be positive".into()));
        }
        if !(self.noise_tol > 0.0) {
            return Err(Error::InvalidConfig("noise_tol must be positive".into()));
        }
        if !(self.beta_scale > 0.0) || !(self.opt_lr > 0.0) || !(self.inv_sigma_sq >= 0.0) {
            return Err(Error::InvalidConfig(
                "beta_scale and opt_lr must be positive, inv_sigma_sq nonnegative".into(),
            ));
        }
        if let NoiseLevel::Known(xi) = self.noise {
            if !(xi >= 0.0) {
                return Err(Error::InvalidConfig(
                    "noise level must be nonnegative".into(),
                ));
            }
        }
        if !(self.noise_init >= 0.0) {
            return Err(Error::InvalidConfig(
                "noise_init must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// `1` for noise-free data, otherwise `max(1, beta_scale * xi^2)`.
    pub fn beta(&self, xi: f64) -> f64 {
        if xi == 0.0 {
            1.0
        } else {
            f64::max(1.0, self.beta_scale * xi * xi)
        }
    }

    pub fn initial_code(&self, latent_dim: usize) -> Result<Vec<f64>> {
        match self.z_init {
            LatentInit::Zero => Ok(vec![0.0; latent_dim]),
            LatentInit::Prior { sigma } => sample_prior(
                latent_dim,
                sigma,
                &mut rng_for(self.seed, "completion-init"),
            ),
        }
    }
}

fn check_observations(params: &NetworkParams, obs: &[Observation]) -> Result<()> {
    if obs.is_empty() {
        return Err(Error::Empty("no observations"));
    }
    let n = params.config.n_surfaces;
    for o in obs {
        if o.surface == 0 || o.surface > n {
            return Err(Error::SurfaceIndex {
                index: o.surface,
                n_surfaces: n,
            });
        }
    }
    Ok(())
}

/// Decoder residuals `f(x_k, z)_{j_k} - s_k`.
pub fn residuals(params: &NetworkParams, z: &[f64], obs: &[Observation]) -> Result<Vec<f64>> {
    check_observations(params, obs)?;
    let (out, _) = forward_obs(params, z, obs)?;
    Ok(obs
        .iter()
        .enumerate()
        .map(|(k, o)| out[[k, o.surface - 1]] - o.s)
        .collect())
}

fn forward_obs(
    params: &NetworkParams,
    z: &[f64],
    obs: &[Observation],
) -> Result<(Array2<f64>, crate::net::Tape)> {
    let cfg = &params.config;
    if z.len() != cfg.latent_dim {
        return Err(Error::dims("latent code", cfg.latent_dim, z.len()));
    }
    let k = cfg.input_scale();
    let mut joint = Array2::zeros((obs.len(), cfg.joint_dim()));
    for (r, o) in obs.iter().enumerate() {
        for a in 0..3 {
            joint[[r, a]] = o.x[a] * k;
        }
        for (a, v) in z.iter().enumerate() {
            joint[[r, 3 + a]] = *v;
        }
    }
    params.forward_tape(joint.view())
}

/// Data and prior parts of the completion objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompletionLoss {
    pub data: f64,
    pub prior: f64,
}

impl CompletionLoss {
    pub fn total(&self) -> f64 {
        self.data + self.prior
    }
}

pub fn completion_loss_terms(
    params: &NetworkParams,
    z: &[f64],
    obs: &[Observation],
    beta: f64,
    inv_sigma_sq: f64,
) -> Result<CompletionLoss> {
    let r = residuals(params, z, obs)?;
    Ok(CompletionLoss {
        data: r.iter().map(|v| v * v).sum::<f64>() / obs.len() as f64,
        prior: beta * inv_sigma_sq * z.iter().map(|v| v * v).sum::<f64>(),
    })
}

pub fn completion_loss(
    params: &NetworkParams,
    z: &[f64],
    obs: &[Observation],
    beta: f64,
    inv_sigma_sq: f64,
) -> Result<f64> {
    Ok(completion_loss_terms(params, z, obs, beta, inv_sigma_sq)?.total())
}

/// Objective value and gradient with respect to `z`.
pub fn completion_gradient(
    params: &NetworkParams,
    z: &[f64],
    obs: &[Observation],
    beta: f64,
    inv_sigma_sq: f64,
) -> Result<(CompletionLoss, Vec<f64>)> {
    check_observations(params, obs)?;
    let (out, tape) = forward_obs(params, z, obs)?;
    let kf = obs.len() as f64;
    let mut cot = Array2::zeros(out.raw_dim());
    let mut data = 0.0;
    for (r, o) in obs.iter().enumerate() {
        let res = out[[r, o.surface - 1]] - o.s;
        data += res * res / kf;
        cot[[r, o.surface - 1]] = 2.0 * res / kf;
    }
    let (_, ju) = params.backward_tape(&tape, cot.view(), false)?;
    let mut grad: Vec<f64> = (0..z.len()).map(|a| ju.column(3 + a).sum()).collect();
    let w = beta * inv_sigma_sq;
    for (g, v) in grad.iter_mut().zip(z) {
        *g += 2.0 * w * v;
    }
    let prior = w * z.iter().map(|v| v * v).sum::<f64>();
    Ok((CompletionLoss { data, prior }, grad))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionReport {
    pub beta: f64,
    /// The rule used to derive `beta` from the noise level.
    pub beta_rule: String,
    pub data_loss: f64,
    pub prior_term: f64,
    pub initial_loss: f64,
    pub iterations: usize,
    /// Iteration at which the returned code was reached (0 = initial code).
    pub best_iteration: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Completion {
    pub z: Vec<f64>,
    pub report: CompletionReport,
}

pub const BETA_RULE: &str = "beta = 1 if xi == 0 else max(1, beta_scale * xi^2)";

/// Minimizes the completion objective over `z` with Adam from `z0` (or the
/// configured initialization), returning the best iterate seen.
pub fn complete(
    params: &NetworkParams,
    obs: &[Observation],
    cfg: &CompletionConfig,
    xi: f64,
    z0: Option<&[f64]>,
) -> Result<Completion> {
    cfg.validate()?;
    check_observations(params, obs)?;
    let beta = cfg.beta(xi);
    let mut z = match z0 {
        Some(z) => z.to_vec(),
        None => cfg.initial_code(params.config.latent_dim)?,
    };
    let mut adam = Adam::new(z.len(), cfg.adam);
    let mut best: Option<(CompletionLoss, Vec<f64>, usize)> = None;
    let mut initial_loss = f64::NAN;
    for it in 0..=cfg.opt_epochs {
        let (loss, grad) = completion_gradient(params, &z, obs, beta, cfg.inv_sigma_sq)?;
        if !loss.total().is_finite() || !grad.iter().all(|g| g.is_finite()) {
            return Err(Error::NumericalAbort {
                stage: "completion",
                step: it,
                term: "completion loss".into(),
            });
        }
        if it == 0 {
            initial_loss = loss.total();
        }
        if best
            .as_ref()
            .is_none_or(|(b, _, _)| loss.total() < b.total())
        {
            best = Some((loss, z.clone(), it));
        }
        if it == cfg.opt_epochs {
            break;
        }
        adam.step(&mut z, &grad, cfg.opt_lr);
    }
    let (loss, z, best_iteration) = best.expect("at least one evaluation");
    Ok(Completion {
        z,
        report: CompletionReport {
            beta,
            beta_rule: BETA_RULE.into(),
            data_loss: loss.data,
            prior_term: loss.prior,
            initial_loss,
            iterations: cfg.opt_epochs,
            best_iteration,
        },
    })
}

/// Completion with the configured noise handling: a known level is used directly,
/// otherwise the level is estimated first.
pub fn complete_with_config(
    params: &NetworkParams,
    obs: &[Observation],
    cfg: &CompletionConfig,
) -> Result<(Completion, Option<NoiseEstimate>)> {
    match cfg.noise {
        NoiseLevel::Known(xi) => Ok((complete(params, obs, cfg, xi, None)?, None)),
        NoiseLevel::Estimate => {
            let est = estimate_noise(params, obs, cfg)?;
            Ok((est.completion.clone(), Some(est)))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseEstimate {
    pub xi: f64,
    /// `xi_0, xi_1, ...` starting with the initial guess.
    pub iterates: Vec<f64>,
    pub converged: bool,
    /// Completion computed with the second-to-last estimate, from which `xi` was measured.
    pub completion: Completion,
}

/// Fixed-point iteration `xi_{n+1}^2 = sum_k r_k^2 / (K - 1)` where the residuals
/// come from a completion run with `beta(xi_n)`. Each step warm-starts from the
/// previous code.
pub fn estimate_noise(
    params: &NetworkParams,
    obs: &[Observation],
    cfg: &CompletionConfig,
) -> Result<NoiseEstimate> {
    cfg.validate()?;
    check_observations(params, obs)?;
    if obs.len() < 2 {
        return Err(Error::InvalidConfig(
            "noise estimation needs at least 2 observations".into(),
        ));
    }
    let mut xi = cfg.noise_init;
    let mut iterates = vec![xi];
    let mut z = cfg.initial_code(params.config.latent_dim)?;
    let mut converged = false;
    let mut last = None;
    for _ in 0..cfg.max_noise_iters.max(1) {
        let c = complete(params, obs, cfg, xi, Some(&z))?;
        let r = residuals(params, &c.z, obs)?;
        let next = (r.iter().map(|v| v * v).sum::<f64>() / (obs.len() - 1) as f64).sqrt();
        z = c.z.clone();
        last = Some(c);
        iterates.push(next);
        let step = (next - xi).abs();
        xi = next;
        if step < cfg.noise_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!(
            "noise estimate did not converge within {} iterations (last {xi})",
            cfg.max_noise_iters
        );
    }
    Ok(NoiseEstimate {
        xi,
        iterates,
        converged,
        completion: last.expect("at least one iteration"),
    })
}

/// JSON report written by the completion commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionOutput {
    pub beta: f64,
    pub beta_rule: String,
    pub xi_iterates: Vec<f64>,
    pub xi_converged: Option<bool>,
    pub data_loss: f64,
    pub prior_term: f64,
    pub iterations: usize,
    pub z: Vec<f64>,
}

impl CompletionOutput {
    pub fn new(c: &Completion, noise: Option<&NoiseEstimate>) -> Self {
        Self {
            beta: c.report.beta,
            beta_rule: c.report.beta_rule.clone(),
            xi_iterates: noise.map(|n| n.iterates.clone()).unwrap_or_default(),
            xi_converged: noise.map(|n| n.converged),
            data_loss: c.report.data_loss,
            prior_term: c.report.prior_term,
            iterations: c.report.iterations,
            z: c.z.clone(),
        }
    }
}
