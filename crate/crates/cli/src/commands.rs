use std::path::{Path, PathBuf};

use log::{info, warn};
use sdf_atlas::checkpoint::Checkpoint;
use sdf_atlas::completion::{
    complete_with_config, estimate_noise, read_observations_csv, surface_observations,
    write_observations_csv, CompletionOutput, NoiseLevel, Observation,
};
use sdf_atlas::geometry::grid::evaluate_grid;
use sdf_atlas::geometry::marching_cubes::extract_surfaces;
use sdf_atlas::geometry::sampling::sample_training_points;
use sdf_atlas::geometry::synthetic::make_synthetic_shapes;
use sdf_atlas::geometry::vec3::Vec3;
use sdf_atlas::metrics::{compare_meshes, SurfaceMetrics};
use sdf_atlas::net::NetworkParams;
use sdf_atlas::rng::{child_seed, rng_for};
use sdf_atlas::ssm::{ssm_fit, ssm_instance, SsmModel};
use sdf_atlas::training::{
    interpolate_codes, sample_prior, train_with, write_history_csv, TrainEvent, TrainingSet,
};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io;
use crate::manifest::Manifest;
use crate::{Cli, CodeArgs, Command, RegionArgs};

/// Per-invocation context: resolved configuration, output directory and manifest.
struct Run {
    cfg: RunConfig,
    out: PathBuf,
    manifest: Manifest,
}

impl Run {
    fn write_text(&mut self, name: &str, text: &str) -> CliResult<PathBuf> {
        let p = self.out.join(name);
        io::write_text(&p, text)?;
        self.manifest.output(&p);
        Ok(p)
    }

    fn write_json(&mut self, name: &str, value: &impl serde::Serialize) -> CliResult<PathBuf> {
        let text = serde_json::to_string_pretty(value)?;
        self.write_text(name, &text)
    }

    fn load_checkpoint(&mut self, path: &Path) -> CliResult<(Checkpoint, NetworkParams)> {
        self.manifest.input(path)?;
        let ck = Checkpoint::from_json(&io::read_text(path)?)?;
        let params = ck.params()?;
        Ok((ck, params))
    }

    fn load_observations(&mut self, path: &Path) -> CliResult<Vec<Observation>> {
        self.manifest.input(path)?;
        let f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        Ok(read_observations_csv(f)?)
    }

    /// Resolves the extraction box and lattice size.
    fn region(&mut self, r: &RegionArgs) -> CliResult<(Vec3, Vec3, [usize; 3])> {
        let dims = r.grid_dims.unwrap_or(self.cfg.grid.dims);
        let (lo, hi) = match (&r.bbox, &r.dataset) {
            (Some(b), _) => *b,
            (None, Some(d)) => {
                self.manifest.input(d)?;
                TrainingSet::load(d)?.bbox().ok_or_else(|| {
                    CliError::Schema(format!("{}: dataset has no points", d.display()))
                })?
            }
            (None, None) => {
                return Err(CliError::Usage(
                    "one of --bbox or --dataset is required".into(),
                ))
            }
        };
        Ok((lo, hi, dims))
    }

    /// Decodes `z` on the lattice and writes one OBJ per surface into `dir`.
    fn decode_to(
        &mut self,
        params: &NetworkParams,
        z: &[f64],
        region: (Vec3, Vec3, [usize; 3]),
        dir: &Path,
    ) -> CliResult<()> {
        let (lo, hi, dims) = region;
        let grid = evaluate_grid(params, z, lo, hi, dims)?;
        let meshes = extract_surfaces(&grid)?;
        for p in io::write_shape(dir, &meshes)? {
            self.manifest.output(&p);
        }
        Ok(())
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), cli.seed)?;
    io::create_dir(&cli.out)?;
    let name = command_name(&cli.command);
    let mut manifest = Manifest::new(name, &cfg, cli.deterministic);
    if let Some(c) = &cli.config {
        manifest.input(c)?;
    }
    if cli.deterministic {
        info!("deterministic run requested (computation is single-threaded and seeded)");
    }
    let mut run = Run {
        cfg,
        out: cli.out,
        manifest,
    };
    dispatch(&mut run, cli.command)?;
    run.manifest.write(&run.out)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::MakeSynthetic { .. } => "make-synthetic",
        Command::SampleDataset { .. } => "sample-dataset",
        Command::Train { .. } => "train",
        Command::Observe { .. } => "observe",
        Command::Complete { .. } => "complete",
        Command::EstimateNoise { .. } => "estimate-noise",
        Command::ExtractMesh { .. } => "extract-mesh",
        Command::Interpolate { .. } => "interpolate",
        Command::SamplePrior { .. } => "sample-prior",
        Command::Metrics { .. } => "metrics",
        Command::SsmFit { .. } => "ssm-fit",
    }
}

fn dispatch(run: &mut Run, command: Command) -> CliResult<()> {
    match command {
        Command::MakeSynthetic { n_shapes } => make_synthetic(run, n_shapes),
        Command::SampleDataset { input, shape_ids } => sample_dataset(run, &input, shape_ids),
        Command::Train { dataset, shape_ids } => train(run, &dataset, shape_ids),
        Command::Observe {
            shape_dir,
            surfaces,
            n,
            xi,
        } => observe(run, &shape_dir, &surfaces, n, xi),
        Command::Complete {
            checkpoint,
            observations,
            xi,
            estimate_noise,
        } => {
            if let Some(xi) = xi {
                run.cfg.completion.noise = NoiseLevel::Known(xi);
            } else if estimate_noise {
                run.cfg.completion.noise = NoiseLevel::Estimate;
            }
            complete(run, &checkpoint, &observations)
        }
        Command::EstimateNoise {
            checkpoint,
            observations,
            noise_init,
        } => {
            if let Some(x) = noise_init {
                run.cfg.completion.noise_init = x;
            }
            noise(run, &checkpoint, &observations)
        }
        Command::ExtractMesh {
            checkpoint,
            code,
            region,
        } => extract_mesh(run, &checkpoint, &code, &region),
        Command::Interpolate {
            checkpoint,
            from,
            to,
            t,
            region,
        } => interpolate(run, &checkpoint, &from, &to, &t, &region),
        Command::SamplePrior {
            checkpoint,
            n_samples,
            sigma,
            region,
        } => prior_samples(run, &checkpoint, n_samples, sigma, &region),
        Command::Metrics {
            gt,
            pred,
            n_obs,
            xi,
        } => metrics(run, &gt, &pred, n_obs, xi),
        Command::SsmFit {
            model,
            target,
            beta,
        } => fit_ssm(run, &model, &target, beta),
    }
}

fn make_synthetic(run: &mut Run, n_shapes: usize) -> CliResult<()> {
    let shapes = make_synthetic_shapes(n_shapes, run.cfg.seed)?;
    let root = run.out.join("shapes");
    let mut summary = Vec::new();
    for s in &shapes {
        for p in io::write_shape(&root.join(&s.id), &s.meshes)? {
            run.manifest.output(&p);
        }
        summary.push(json!({ "id": s.id, "params": s.params, "diameter": s.diameter() }));
    }
    run.write_json("synthetic.json", &summary)?;
    info!("wrote {} shapes under {}", shapes.len(), root.display());
    Ok(())
}

fn sample_dataset(run: &mut Run, input: &Path, only: Option<Vec<String>>) -> CliResult<()> {
    let mut ids = io::shape_ids(input)?;
    if let Some(only) = only {
        if let Some(bad) = only.iter().find(|id| !ids.contains(id)) {
            return Err(CliError::Usage(format!(
                "shape id {bad} not found in {}",
                input.display()
            )));
        }
        ids = only;
    }
    let mut set = TrainingSet::default();
    for id in &ids {
        let dir = input.join(id);
        run.manifest.input(&dir)?;
        let meshes = io::read_shape(&dir)?;
        set.shapes
            .push(sample_training_points(id, &meshes, &run.cfg.sampling)?);
        info!("sampled {id}");
    }
    set.validate()?;
    run.write_text("dataset.json", &set.to_json()?)?;
    info!("{} shapes, {} points", set.shapes.len(), set.total_points());
    Ok(())
}

fn train(run: &mut Run, dataset: &Path, only: Option<Vec<String>>) -> CliResult<()> {
    run.manifest.input(dataset)?;
    let mut set = TrainingSet::load(dataset)?;
    if let Some(ids) = only {
        set = set.subset(&ids)?;
    }
    let ids: Vec<String> = set.shapes.iter().map(|s| s.id.clone()).collect();
    let epochs = run.cfg.training.epochs;
    let mut written = Vec::new();
    let mut failure = None;
    let out = train_with(&set, &run.cfg.network, &run.cfg.training, |ev| match ev {
        TrainEvent::Epoch(r) => {
            if r.epoch % 50 == 0 || r.epoch + 1 == epochs {
                info!(
                    "epoch {}: loss_L {:.4} penalty {:.3e} lr {:.2e}",
                    r.epoch, r.loss_l, r.penalty, r.lr
                );
            }
        }
        TrainEvent::Checkpoint {
            epoch,
            params,
            bank,
        } => {
            if failure.is_some() {
                return;
            }
            let ck = Checkpoint::new(params, Some(bank)).with_shape_ids(ids.clone());
            let res = ck.to_json().map_err(CliError::from).and_then(|text| {
                io::write_text(
                    &run.out.join(format!("checkpoint_epoch_{epoch:04}.json")),
                    &text,
                )
            });
            match res {
                Ok(()) => written.push(epoch),
                Err(e) => failure = Some(e),
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    for epoch in written {
        let p = run.out.join(format!("checkpoint_epoch_{epoch:04}.json"));
        run.manifest.output(&p);
    }
    let ck = Checkpoint::new(&out.params, Some(&out.bank)).with_shape_ids(ids);
    run.write_text("checkpoint.json", &ck.to_json()?)?;
    let mut buf = Vec::new();
    write_history_csv(&out.history, &mut buf).map_err(|e| CliError::Other(e.to_string()))?;
    run.write_text("history.csv", &String::from_utf8_lossy(&buf))?;
    Ok(())
}

fn observe(
    run: &mut Run,
    shape_dir: &Path,
    surfaces: &[usize],
    n: usize,
    xi: f64,
) -> CliResult<()> {
    if !(xi >= 0.0) {
        return Err(CliError::Usage("--xi must be nonnegative".into()));
    }
    run.manifest.input(shape_dir)?;
    let meshes = io::read_shape(shape_dir)?;
    let mut obs = Vec::new();
    for &j in surfaces {
        if j == 0 || j > meshes.len() {
            return Err(CliError::Usage(format!(
                "surface {j} out of range 1..={}",
                meshes.len()
            )));
        }
        let seed = child_seed(run.cfg.seed, &format!("observe/{j}"));
        obs.extend(surface_observations(&meshes[j - 1], j, n, xi, seed)?);
    }
    let mut buf = Vec::new();
    write_observations_csv(&obs, &mut buf)?;
    run.write_text("observations.csv", &String::from_utf8_lossy(&buf))?;
    Ok(())
}

fn complete(run: &mut Run, checkpoint: &Path, observations: &Path) -> CliResult<()> {
    let (_, params) = run.load_checkpoint(checkpoint)?;
    let obs = run.load_observations(observations)?;
    let (c, est) = complete_with_config(&params, &obs, &run.cfg.completion)?;
    info!(
        "completed from {} observations: data loss {:.4}, beta {}",
        obs.len(),
        c.report.data_loss,
        c.report.beta
    );
    run.write_json("completion.json", &CompletionOutput::new(&c, est.as_ref()))?;
    Ok(())
}

fn noise(run: &mut Run, checkpoint: &Path, observations: &Path) -> CliResult<()> {
    let (_, params) = run.load_checkpoint(checkpoint)?;
    let obs = run.load_observations(observations)?;
    let est = estimate_noise(&params, &obs, &run.cfg.completion)?;
    if !est.converged {
        warn!("noise estimate did not converge; reporting the last iterate");
    }
    info!("estimated noise level {:.4} mm", est.xi);
    let report = json!({
        "xi": est.xi,
        "iterates": est.iterates,
        "converged": est.converged,
        "completion": CompletionOutput::new(&est.completion, Some(&est)),
    });
    run.write_json("noise.json", &report)?;
    Ok(())
}

fn extract_mesh(
    run: &mut Run,
    checkpoint: &Path,
    code: &CodeArgs,
    region: &RegionArgs,
) -> CliResult<()> {
    let (ck, params) = run.load_checkpoint(checkpoint)?;
    let z = match (&code.code_file, &code.shape_id) {
        (Some(f), _) => {
            run.manifest.input(f)?;
            io::read_code(f)?
        }
        (None, Some(id)) => ck.code_for(id)?,
        (None, None) => {
            return Err(CliError::Usage(
                "one of --code-file or --shape-id is required".into(),
            ))
        }
    };
    let region = run.region(region)?;
    let out = run.out.clone();
    run.decode_to(&params, &z, region, &out)
}

/// A code given as a file path, or else as a shape id stored in the checkpoint.
fn resolve_code(run: &mut Run, ck: &Checkpoint, source: &str) -> CliResult<Vec<f64>> {
    let p = Path::new(source);
    if p.is_file() {
        run.manifest.input(p)?;
        return io::read_code(p);
    }
    ck.code_for(source).map_err(|e| {
        CliError::Usage(format!(
            "{source} is neither a code file nor a stored shape id: {e}"
        ))
    })
}

fn interpolate(
    run: &mut Run,
    checkpoint: &Path,
    from: &str,
    to: &str,
    ts: &[f64],
    region: &RegionArgs,
) -> CliResult<()> {
    let (ck, params) = run.load_checkpoint(checkpoint)?;
    let z1 = resolve_code(run, &ck, from)?;
    let z2 = resolve_code(run, &ck, to)?;
    let region = run.region(region)?;
    let mut codes = Vec::new();
    for &t in ts {
        let z = interpolate_codes(&z1, &z2, t)?;
        let dir = run.out.join(format!("t_{t:.3}"));
        run.decode_to(&params, &z, region, &dir)?;
        codes.push(json!({ "t": t, "dir": dir, "z": z }));
    }
    run.write_json("codes.json", &codes)?;
    Ok(())
}

fn prior_samples(
    run: &mut Run,
    checkpoint: &Path,
    n: usize,
    sigma: Option<f64>,
    region: &RegionArgs,
) -> CliResult<()> {
    let (_, params) = run.load_checkpoint(checkpoint)?;
    let sigma = match sigma {
        Some(s) => s,
        None if run.cfg.training.inv_sigma_sq > 0.0 => run.cfg.training.inv_sigma_sq.recip().sqrt(),
        None => {
            return Err(CliError::Usage(
                "--sigma is required when the prior weight is 0".into(),
            ))
        }
    };
    if !(sigma > 0.0) {
        return Err(CliError::Usage("--sigma must be positive".into()));
    }
    let region = run.region(region)?;
    let mut rng = rng_for(run.cfg.seed, "sample-prior");
    let mut codes = Vec::new();
    for i in 0..n {
        let z = sample_prior(params.config.latent_dim, sigma, &mut rng)?;
        let dir = run.out.join(format!("sample_{i:03}"));
        run.decode_to(&params, &z, region, &dir)?;
        codes.push(json!({ "sample": i, "dir": dir, "z": z }));
    }
    run.write_json("codes.json", &json!({ "sigma": sigma, "samples": codes }))?;
    Ok(())
}

fn metrics(
    run: &mut Run,
    gt: &Path,
    pred: &Path,
    n_obs: Option<usize>,
    xi: Option<f64>,
) -> CliResult<()> {
    let gt_ids = io::shape_ids(gt)?;
    let pred_ids = io::shape_ids(pred)?;
    let path = run.out.join("metrics.csv");
    let mut w = csv::Writer::from_path(&path)
        .map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
    w.write_record(["shape_id", "n", "xi", "surface", "cd", "hd", "lddmm_e3"])?;
    let fmt_opt = |v: Option<String>| v.unwrap_or_default();
    for id in &pred_ids {
        if !gt_ids.contains(id) {
            return Err(CliError::Schema(format!(
                "predicted shape {id} has no ground truth in {}",
                gt.display()
            )));
        }
        run.manifest.input(&gt.join(id))?;
        run.manifest.input(&pred.join(id))?;
        let truth = io::read_shape(&gt.join(id))?;
        let recon = io::read_shape(&pred.join(id))?;
        if truth.len() != recon.len() {
            return Err(CliError::Schema(format!(
                "{id}: {} ground-truth surfaces but {} predicted",
                truth.len(),
                recon.len()
            )));
        }
        for (j, (a, b)) in truth.iter().zip(&recon).enumerate() {
            let m = if b.is_empty() {
                warn!(
                    "{id} surface {}: predicted mesh is empty; distances are undefined",
                    j + 1
                );
                SurfaceMetrics {
                    cd: f64::NAN,
                    hd: f64::NAN,
                    lddmm: sdf_atlas::metrics::lddmm_loss(a, b, run.cfg.metrics.gamma)?,
                }
            } else {
                compare_meshes(a, b, &run.cfg.metrics)?
            };
            info!(
                "{id} surface {}: CD {:.3} HD {:.3} LDDMM/1e3 {:.3}",
                j + 1,
                m.cd,
                m.hd,
                m.lddmm_e3()
            );
            w.write_record([
                id.clone(),
                fmt_opt(n_obs.map(|v| v.to_string())),
                fmt_opt(xi.map(|v| v.to_string())),
                (j + 1).to_string(),
                m.cd.to_string(),
                m.hd.to_string(),
                m.lddmm_e3().to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    run.manifest.output(&path);
    Ok(())
}

fn fit_ssm(run: &mut Run, model_path: &Path, target: &Path, beta: f64) -> CliResult<()> {
    if !(beta >= 0.0) {
        return Err(CliError::Usage("--beta must be nonnegative".into()));
    }
    run.manifest.input(model_path)?;
    run.manifest.input(target)?;
    let model = SsmModel::load(model_path)?;
    let pts = io::read_points_csv(target)?;
    run.cfg.ssm.beta = beta;
    let fit = ssm_fit(&model, &pts, &run.cfg.ssm)?;
    info!(
        "SSM fit objective {:.5} (model scale {:.3})",
        fit.loss,
        model.scale()
    );
    let inst = ssm_instance(&model, &fit.alpha, fit.b)?;
    let fitted: Vec<Vec3> = inst
        .rows()
        .into_iter()
        .map(|r| [r[0], r[1], r[2]])
        .collect();
    let p = run.out.join("ssm_fitted.csv");
    io::write_points_csv(&p, &fitted)?;
    run.manifest.output(&p);
    let report = json!({
        "beta": beta,
        "alpha": fit.alpha,
        "b": fit.b,
        "loss": fit.loss,
        "best_so_far": fit.best_so_far(),
    });
    run.write_json("ssm_fit.json", &report)?;
    Ok(())
}
