//! Joint optimization of decoder weights and per-shape latent codes.

use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{sigmoid, softplus, NetworkConfig, NetworkGrads, NetworkParams};
use crate::optim::{Adam, AdamConfig, StepDecay};
use crate::rng::rng_for;

/// Rows processed per forward/backward call.
const CHUNK: usize = 4096;

/// Sampled signed distances for one training shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeSamples {
    pub id: String,
    /// `K x 3` sample positions in mm.
    pub points: Array2<f64>,
    /// `K x n_surfaces` signed distances in mm.
    pub distances: Array2<f64>,
}

impl ShapeSamples {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingSet {
    pub shapes: Vec<ShapeSamples>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    shapes: Vec<DatasetShape>,
}

#[derive(Serialize, Deserialize)]
struct DatasetShape {
    id: String,
    samples: Vec<Vec<f64>>,
}

impl TrainingSet {
    pub fn n_surfaces(&self) -> usize {
        self.shapes.first().map_or(0, |s| s.distances.ncols())
    }

    pub fn total_points(&self) -> usize {
        self.shapes.iter().map(ShapeSamples::len).sum()
    }

    /// Axis-aligned bounds of every sample point, `None` for an empty set.
    pub fn bbox(&self) -> Option<([f64; 3], [f64; 3])> {
        let mut it = self.shapes.iter().flat_map(|s| s.points.rows().into_iter());
        let first = it.next()?;
        let mut lo = [first[0], first[1], first[2]];
        let mut hi = lo;
        for r in it {
            for k in 0..3 {
                lo[k] = lo[k].min(r[k]);
                hi[k] = hi[k].max(r[k]);
            }
        }
        Some((lo, hi))
    }

    /// Index of the shape with the given id.
    pub fn position(&self, id: &str) -> Option<usize> {
        self.shapes.iter().position(|s| s.id == id)
    }

    /// The shapes whose ids are listed, in list order.
    pub fn subset(&self, ids: &[String]) -> Result<Self> {
        let shapes = ids
            .iter()
            .map(|id| {
                self.position(id)
                    .map(|i| self.shapes[i].clone())
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown shape id {id:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { shapes })
    }

    pub fn validate(&self) -> Result<()> {
        if self.shapes.is_empty() {
            return Err(Error::Empty("training set has no shapes"));
        }
        let n = self.n_surfaces();
        for s in &self.shapes {
            if s.is_empty() {
                return Err(Error::Empty("training shape has no samples"));
            }
            if s.points.ncols() != 3 {
                return Err(Error::dims(
                    format!("shape {} points", s.id),
                    3,
                    s.points.ncols(),
                ));
            }
            if s.distances.ncols() != n || s.distances.nrows() != s.points.nrows() {
                return Err(Error::dims(
                    format!("shape {} distances", s.id),
                    n,
                    s.distances.ncols(),
                ));
            }
            if !s
                .points
                .iter()
                .chain(s.distances.iter())
                .all(|v| v.is_finite())
            {
                return Err(Error::NonFinite(format!("shape {} samples", s.id)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = DatasetFile {
            shapes: self
                .shapes
                .iter()
                .map(|s| DatasetShape {
                    id: s.id.clone(),
                    samples: s
                        .points
                        .rows()
                        .into_iter()
                        .zip(s.distances.rows())
                        .map(|(p, d)| p.iter().chain(d.iter()).copied().collect())
                        .collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(text)?;
        let mut shapes = Vec::with_capacity(file.shapes.len());
        for s in file.shapes {
            let width = s.samples.first().map_or(0, Vec::len);
            if width < 4 {
                return Err(Error::parse(
                    format!("dataset shape {}", s.id),
                    "each sample needs x, y, z and at least one distance",
                ));
            }
            let k = s.samples.len();
            let mut points = Array2::zeros((k, 3));
            let mut distances = Array2::zeros((k, width - 3));
            for (r, row) in s.samples.iter().enumerate() {
                if row.len() != width {
                    return Err(Error::parse(
                        format!("dataset shape {} sample {r}", s.id),
                        format!("expected {width} values, found {}", row.len()),
                    ));
                }
                points.row_mut(r).assign(&ArrayView1::from(&row[..3]));
                distances.row_mut(r).assign(&ArrayView1::from(&row[3..]));
            }
            shapes.push(ShapeSamples {
                id: s.id,
                points,
                distances,
            });
        }
        let set = TrainingSet { shapes };
        set.validate()?;
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

/// Latent codes, one row per training shape.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBank {
    pub codes: Array2<f64>,
}

impl LatentBank {
    pub fn len(&self) -> usize {
        self.codes.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.nrows() == 0
    }

    pub fn code(&self, i: usize) -> Vec<f64> {
        self.codes.row(i).to_vec()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Weight of the Gaussian latent prior, `1 / sigma^2`.
    pub inv_sigma_sq: f64,
    /// Weight of the Lipschitz penalty; 0 disables it.
    pub alpha: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    /// Points per gradient step; `None` runs one full-batch step per epoch.
    pub batch_size: Option<usize>,
    pub adam: AdamConfig,
    pub seed: u64,
    pub latent_init_std: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            inv_sigma_sq: 1.8e-7,
            alpha: 1.9e-6,
            epochs: 3000,
            learning_rate: 0.005,
            lr_decay_epochs: vec![2700, 2900],
            lr_decay_factor: 0.2,
            batch_size: None,
            adam: AdamConfig::default(),
            seed: 0,
            latent_init_std: 0.01,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.inv_sigma_sq >= 0.0) || !(self.alpha >= 0.0) {
            return bad("inv_sigma_sq and alpha must be nonnegative");
        }
        if !self.lr_decay_epochs.windows(2).all(|w| w[0] < w[1]) {
            return bad("lr_decay_epochs must be strictly increasing");
        }
        if self
            .lr_decay_epochs
            .last()
            .is_some_and(|&e| e >= self.epochs)
            && self.epochs > 0
        {
            return bad("lr_decay_epochs must be below epochs");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad("lr_decay_factor must lie in (0, 1]");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be positive");
        }
        if !(self.latent_init_std >= 0.0) {
            return bad("latent_init_std must be nonnegative");
        }
        Ok(())
    }

    pub fn schedule(&self) -> StepDecay {
        StepDecay {
            base: self.learning_rate,
            milestones: self.lr_decay_epochs.clone(),
            factor: self.lr_decay_factor,
        }
    }
}

/// One row of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Prior-regularized loss at the start of the epoch (minibatch mean when batching).
    pub loss_l: f64,
    /// Data part of `loss_l`: shape-averaged mean squared error per channel, mm^2.
    pub data: f64,
    /// `alpha * prod softplus(c_i)`.
    pub penalty: f64,
    pub lr: f64,
}

impl EpochRecord {
    pub fn loss_j(&self) -> f64 {
        self.loss_l + self.penalty
    }
}

pub fn write_history_csv<W: Write>(history: &[EpochRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "epoch,loss_L,penalty,lr")?;
    for r in history {
        writeln!(out, "{},{},{},{}", r.epoch, r.loss_l, r.penalty, r.lr)?;
    }
    Ok(())
}

fn check_shapes(params: &NetworkParams, bank: &LatentBank, set: &TrainingSet) -> Result<()> {
    set.validate()?;
    if bank.len() != set.shapes.len() {
        return Err(Error::dims(
            "latent bank rows",
            set.shapes.len(),
            bank.len(),
        ));
    }
    if bank.codes.ncols() != params.config.latent_dim {
        return Err(Error::dims(
            "latent bank cols",
            params.config.latent_dim,
            bank.codes.ncols(),
        ));
    }
    if set.n_surfaces() != params.config.n_surfaces {
        return Err(Error::dims(
            "sample distances",
            params.config.n_surfaces,
            set.n_surfaces(),
        ));
    }
    Ok(())
}

/// Breakdown of the training objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub data: f64,
    pub prior: f64,
    pub penalty: f64,
}

impl LossTerms {
    pub fn loss_l(&self) -> f64 {
        self.data + self.prior
    }

    pub fn loss_j(&self) -> f64 {
        self.loss_l() + self.penalty
    }
}

/// A list of `(shape, point)` rows evaluated together.
struct Batch<'a> {
    rows: &'a [(usize, usize)],
    /// Multiplier on the data-term weights (1 for full batch).
    weight: f64,
}

/// Data loss over `batch` and, when requested, its gradient.
fn batch_data_term(
    params: &NetworkParams,
    bank: &LatentBank,
    set: &TrainingSet,
    batch: &Batch,
    grads: Option<(&mut NetworkGrads, &mut Array2<f64>)>,
) -> Result<f64> {
    let cfg = &params.config;
    let n_shapes = set.shapes.len() as f64;
    let n_out = cfg.n_surfaces as f64;
    let k = cfg.input_scale();
    let d = cfg.latent_dim;
    let mut grads = grads;
    let mut total = 0.0;
    for rows in batch.rows.chunks(CHUNK) {
        let mut joint = Array2::zeros((rows.len(), 3 + d));
        for (r, &(si, pi)) in rows.iter().enumerate() {
            let p = set.shapes[si].points.row(pi);
            joint[[r, 0]] = p[0] * k;
            joint[[r, 1]] = p[1] * k;
            joint[[r, 2]] = p[2] * k;
            joint.slice_mut(s![r, 3..]).assign(&bank.codes.row(si));
        }
        let (out, tape) = params.forward_tape(joint.view())?;
        let mut cot = Array2::zeros(out.raw_dim());
        for (r, &(si, pi)) in rows.iter().enumerate() {
            let shape = &set.shapes[si];
            let w = batch.weight / (n_shapes * n_out * shape.len() as f64);
            let target = shape.distances.row(pi);
            for j in 0..cfg.n_surfaces {
                let res = out[[r, j]] - target[j];
                total += w * res * res;
                cot[[r, j]] = 2.0 * w * res;
            }
        }
        if let Some((g, gz)) = grads.as_mut() {
            let (pg, ju) = params.backward_tape(&tape, cot.view(), true)?;
            g.add_assign(&pg.expect("requested"));
            for (r, &(si, _)) in rows.iter().enumerate() {
                let mut row = gz.row_mut(si);
                row += &ju.slice(s![r, 3..]);
            }
        }
    }
    Ok(total)
}

fn all_rows(set: &TrainingSet) -> Vec<(usize, usize)> {
    set.shapes
        .iter()
        .enumerate()
        .flat_map(|(si, s)| (0..s.len()).map(move |pi| (si, pi)))
        .collect()
}

fn prior_term(bank: &LatentBank, inv_sigma_sq: f64) -> f64 {
    let n = bank.len() as f64;
    inv_sigma_sq * bank.codes.iter().map(|v| v * v).sum::<f64>() / n
}

pub fn loss_terms(
    params: &NetworkParams,
    bank: &LatentBank,
    set: &TrainingSet,
    cfg: &TrainingConfig,
) -> Result<LossTerms> {
    check_shapes(params, bank, set)?;
    let rows = all_rows(set);
    let data = batch_data_term(
        params,
        bank,
        set,
        &Batch {
            rows: &rows,
            weight: 1.0,
        },
        None,
    )?;
    Ok(LossTerms {
        data,
        prior: prior_term(bank, cfg.inv_sigma_sq),
        penalty: cfg.alpha * params.lipschitz_bound(),
    })
}

/// The prior-regularized data loss averaged over shapes.
pub fn loss_l(
    params: &NetworkParams,
    bank: &LatentBank,
    set: &TrainingSet,
    inv_sigma_sq: f64,
) -> Result<f64> {
    let cfg = TrainingConfig {
        inv_sigma_sq,
        alpha: 0.0,
        ..TrainingConfig::default()
    };
    Ok(loss_terms(params, bank, set, &cfg)?.loss_l())
}

/// `loss_l + alpha * prod softplus(c_i)`.
pub fn loss_j(
    params: &NetworkParams,
    bank: &LatentBank,
    set: &TrainingSet,
    inv_sigma_sq: f64,
    alpha: f64,
) -> Result<f64> {
    if alpha > 0.0 && !params.config.lipschitz_enabled {
        return Err(Error::InvalidConfig(
            "alpha > 0 requires Lipschitz-normalized layers".into(),
        ));
    }
    let l = loss_l(params, bank, set, inv_sigma_sq)?;
    if alpha == 0.0 {
        return Ok(l);
    }
    Ok(l + alpha * params.lipschitz_bound())
}

/// Adds the gradient of `alpha * prod softplus(c_i)` to `grads`.
fn add_penalty_grad(params: &NetworkParams, alpha: f64, grads: &mut NetworkGrads) {
    if alpha == 0.0 {
        return;
    }
    let bound = params.lipschitz_bound();
    for (layer, g) in params.layers.iter().zip(&mut grads.layers) {
        if let (Some(c), Some(gc)) = (layer.c, g.c.as_mut()) {
            *gc += alpha * bound * sigmoid(c) / softplus(c);
        }
    }
}

/// Full-batch gradient of `loss_j` with respect to parameters and latent codes.
pub fn loss_j_gradient(
    params: &NetworkParams,
    bank: &LatentBank,
    set: &TrainingSet,
    cfg: &TrainingConfig,
) -> Result<(LossTerms, NetworkGrads, Array2<f64>)> {
    check_shapes(params, bank, set)?;
    let rows = all_rows(set);
    let mut g = NetworkGrads::zeros_like(params);
    let mut gz = Array2::zeros(bank.codes.raw_dim());
    let data = batch_data_term(
        params,
        bank,
        set,
        &Batch {
            rows: &rows,
            weight: 1.0,
        },
        Some((&mut g, &mut gz)),
    )?;
    add_prior_grad(bank, cfg.inv_sigma_sq, &mut gz);
    add_penalty_grad(params, cfg.alpha, &mut g);
    Ok((
        LossTerms {
            data,
            prior: prior_term(bank, cfg.inv_sigma_sq),
            penalty: cfg.alpha * params.lipschitz_bound(),
        },
        g,
        gz,
    ))
}

fn add_prior_grad(bank: &LatentBank, inv_sigma_sq: f64, gz: &mut Array2<f64>) {
    let k = 2.0 * inv_sigma_sq / bank.len() as f64;
    gz.scaled_add(k, &bank.codes);
}

/// Events reported while training runs.
pub enum TrainEvent<'a> {
    Epoch(&'a EpochRecord),
    /// Emitted just before the learning rate drops at `epoch`, and once at the end.
    Checkpoint {
        epoch: usize,
        params: &'a NetworkParams,
        bank: &'a LatentBank,
    },
}

pub struct TrainOutput {
    pub params: NetworkParams,
    pub bank: LatentBank,
    pub history: Vec<EpochRecord>,
}

pub fn train(set: &TrainingSet, net: &NetworkConfig, cfg: &TrainingConfig) -> Result<TrainOutput> {
    train_with(set, net, cfg, |_| {})
}

/// Adam over weights and codes jointly with the step-decay schedule.
pub fn train_with<F>(
    set: &TrainingSet,
    net: &NetworkConfig,
    cfg: &TrainingConfig,
    mut observer: F,
) -> Result<TrainOutput>
where
    F: FnMut(TrainEvent<'_>),
{
    set.validate()?;
    cfg.validate()?;
    net.validate()?;
    if cfg.alpha > 0.0 && !net.lipschitz_enabled {
        return Err(Error::InvalidConfig(
            "alpha > 0 requires Lipschitz-normalized layers".into(),
        ));
    }
    let mut params = NetworkParams::init(net.clone(), &mut rng_for(cfg.seed, "net-init"))?;
    let mut bank = init_bank(
        set.shapes.len(),
        net.latent_dim,
        cfg.latent_init_std,
        cfg.seed,
    )?;
    check_shapes(&params, &bank, set)?;

    let n_net = params.n_params();
    let mut flat = params.to_flat();
    let mut adam_net = Adam::new(n_net, cfg.adam);
    let mut adam_z = Adam::new(bank.codes.len(), cfg.adam);
    let schedule = cfg.schedule();
    let mut shuffle_rng = rng_for(cfg.seed, "minibatch");
    let mut rows = all_rows(set);
    let total = rows.len();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch);
        if epoch > 0 && cfg.lr_decay_epochs.contains(&epoch) {
            observer(TrainEvent::Checkpoint {
                epoch,
                params: &params,
                bank: &bank,
            });
        }
        let batch_size = cfg.batch_size.unwrap_or(total).min(total);
        if batch_size < total {
            rows.shuffle(&mut shuffle_rng);
        }
        let mut data_sum = 0.0;
        let mut n_steps = 0usize;
        let mut epoch_prior = 0.0;
        let mut epoch_penalty = 0.0;
        for chunk in rows.chunks(batch_size) {
            let mut g = NetworkGrads::zeros_like(&params);
            let mut gz = Array2::zeros(bank.codes.raw_dim());
            let batch = Batch {
                rows: chunk,
                weight: total as f64 / chunk.len() as f64,
            };
            let data = batch_data_term(&params, &bank, set, &batch, Some((&mut g, &mut gz)))?;
            let prior = prior_term(&bank, cfg.inv_sigma_sq);
            let penalty = cfg.alpha * params.lipschitz_bound();
            for (term, v) in [
                ("data loss", data),
                ("latent prior", prior),
                ("Lipschitz penalty", penalty),
            ] {
                if !v.is_finite() {
                    return Err(Error::NumericalAbort {
                        stage: "train",
                        step: epoch,
                        term: term.to_string(),
                    });
                }
            }
            if n_steps == 0 {
                epoch_prior = prior;
                epoch_penalty = penalty;
            }
            data_sum += data;
            n_steps += 1;
            add_prior_grad(&bank, cfg.inv_sigma_sq, &mut gz);
            add_penalty_grad(&params, cfg.alpha, &mut g);
            adam_net.step(&mut flat, &g.to_flat(), lr);
            params.set_flat(&flat)?;
            adam_z.step(
                bank.codes.as_slice_mut().expect("standard layout"),
                gz.as_slice().expect("standard layout"),
                lr,
            );
        }
        let data = data_sum / n_steps as f64;
        let record = EpochRecord {
            epoch,
            loss_l: data + epoch_prior,
            data,
            penalty: epoch_penalty,
            lr,
        };
        observer(TrainEvent::Epoch(&record));
        history.push(record);
    }
    if cfg.epochs > 0 {
        observer(TrainEvent::Checkpoint {
            epoch: cfg.epochs,
            params: &params,
            bank: &bank,
        });
    }
    Ok(TrainOutput {
        params,
        bank,
        history,
    })
}

fn init_bank(n: usize, d: usize, std: f64, seed: u64) -> Result<LatentBank> {
    let mut rng = rng_for(seed, "latent-init");
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok(LatentBank {
        codes: Array2::from_shape_fn((n, d), |_| normal.sample(&mut rng)),
    })
}

/// `t * z1 + (1 - t) * z2`; `t` outside `[0, 1]` extrapolates.
pub fn interpolate_codes(z1: &[f64], z2: &[f64], t: f64) -> Result<Vec<f64>> {
    if z1.len() != z2.len() {
        return Err(Error::dims("interpolated code", z1.len(), z2.len()));
    }
    Ok(z1
        .iter()
        .zip(z2)
        .map(|(a, b)| t * a + (1.0 - t) * b)
        .collect())
}

/// Draws a code with i.i.d. `Normal(0, sigma^2)` entries.
pub fn sample_prior<R: Rng + ?Sized>(d: usize, sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok((0..d).map(|_| normal.sample(rng)).collect())
}
