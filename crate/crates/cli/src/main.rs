//! `sdf-atlas`: train, complete and evaluate joint multi-surface SDF atlases.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod io;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sdf_atlas::geometry::vec3::Vec3;

use crate::error::{exit, CliError};

#[derive(Parser, Debug)]
#[command(name = "sdf-atlas", version, about)]
pub struct Cli {
    /// JSON run configuration; missing sections take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Root seed, overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Record that a deterministic run was requested. Every computation is
    /// single-threaded with seeded generators, so runs are reproducible either way.
    #[arg(long, global = true)]
    pub deterministic: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate nested-ellipsoid shapes as OBJ surfaces.
    MakeSynthetic {
        #[arg(long, default_value_t = 10)]
        n_shapes: usize,
    },
    /// Sample signed distances from a directory of shapes into dataset.json.
    SampleDataset {
        #[arg(long)]
        input: PathBuf,
        /// Only these shape ids (comma-separated).
        #[arg(long, value_delimiter = ',')]
        shape_ids: Option<Vec<String>>,
    },
    /// Train decoder and latent codes.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Train on this subset of the dataset (comma-separated ids), e.g. one fold.
        #[arg(long, value_delimiter = ',')]
        shape_ids: Option<Vec<String>>,
    },
    /// Draw noisy surface observations from a shape directory into observations.csv.
    Observe {
        #[arg(long)]
        shape_dir: PathBuf,
        /// Surfaces to observe (1-based, comma-separated).
        #[arg(long, value_delimiter = ',', default_value = "1")]
        surfaces: Vec<usize>,
        /// Points per observed surface.
        #[arg(long)]
        n: usize,
        /// Standard deviation of the isotropic position noise, mm.
        #[arg(long, default_value_t = 0.0)]
        xi: f64,
    },
    /// Fit a latent code to observations; writes completion.json.
    Complete {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        observations: PathBuf,
        /// Known noise level, mm (overrides the configuration).
        #[arg(long, conflicts_with = "estimate_noise")]
        xi: Option<f64>,
        /// Estimate the noise level before completing.
        #[arg(long)]
        estimate_noise: bool,
    },
    /// Estimate the observation noise level; writes noise.json.
    EstimateNoise {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        observations: PathBuf,
        /// Starting estimate, mm.
        #[arg(long)]
        noise_init: Option<f64>,
    },
    /// Extract the surfaces of one code by marching cubes.
    ExtractMesh {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        code: CodeArgs,
        #[command(flatten)]
        region: RegionArgs,
    },
    /// Decode `t * z_from + (1 - t) * z_to` for several `t`.
    Interpolate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Shape id in the checkpoint, or a code file.
        #[arg(long)]
        from: String,
        /// Shape id in the checkpoint, or a code file.
        #[arg(long)]
        to: String,
        #[arg(
            long,
            value_delimiter = ',',
            allow_negative_numbers = true,
            default_value = "-0.5,0,0.5,1,1.5"
        )]
        t: Vec<f64>,
        #[command(flatten)]
        region: RegionArgs,
    },
    /// Decode codes drawn from the Gaussian latent prior.
    SamplePrior {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 5)]
        n_samples: usize,
        /// Prior standard deviation; defaults to the one implied by the training prior weight.
        #[arg(long)]
        sigma: Option<f64>,
        #[command(flatten)]
        region: RegionArgs,
    },
    /// Compare predicted surfaces with ground truth; writes metrics.csv.
    Metrics {
        /// Directory of ground-truth shape directories.
        #[arg(long)]
        gt: PathBuf,
        /// Directory of predicted shape directories with matching ids.
        #[arg(long)]
        pred: PathBuf,
        /// Number of observations behind the predictions, recorded in the table.
        #[arg(long)]
        n_obs: Option<usize>,
        /// Noise level behind the predictions, recorded in the table.
        #[arg(long)]
        xi: Option<f64>,
    },
    /// Fit a statistical shape model to a point cloud; writes ssm_fit.json.
    SsmFit {
        #[arg(long)]
        model: PathBuf,
        /// Point cloud with an x,y,z header.
        #[arg(long)]
        target: PathBuf,
        /// Weight of the mode-coefficient norm. Required: there is no neutral default.
        #[arg(long)]
        beta: f64,
    },
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
pub struct CodeArgs {
    /// JSON code file (an array, or an object with a `z` field).
    #[arg(long)]
    pub code_file: Option<PathBuf>,
    /// Training shape id stored in the checkpoint.
    #[arg(long)]
    pub shape_id: Option<String>,
}

#[derive(Args, Debug)]
pub struct RegionArgs {
    /// Extraction box `xmin,ymin,zmin,xmax,ymax,zmax` in mm (padded by 5%).
    #[arg(long, value_parser = io::parse_bbox, allow_hyphen_values = true, conflicts_with = "dataset", required_unless_present = "dataset")]
    pub bbox: Option<(Vec3, Vec3)>,
    /// Use the bounding box of this dataset's sample points.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Lattice size, `N` or `NX,NY,NZ`; defaults to the configured grid.
    #[arg(long, value_parser = io::parse_dims)]
    pub grid_dims: Option<[usize; 3]>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(exit::OK);
            }
            let err = CliError::Usage(e.render().to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            std::process::exit(err.code());
        }
    };
    if let Err(err) = commands::run(cli) {
        eprintln!("{}", err.to_json());
        std::process::exit(err.code());
    }
}
