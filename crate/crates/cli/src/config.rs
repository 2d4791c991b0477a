//! Run configuration: one JSON document with a section per subsystem.

use std::path::Path;

use sdf_atlas::completion::CompletionConfig;
use sdf_atlas::geometry::sampling::SamplingConfig;
use sdf_atlas::metrics::MetricsConfig;
use sdf_atlas::net::NetworkConfig;
use sdf_atlas::ssm::SsmFitConfig;
use sdf_atlas::training::TrainingConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub dims: [usize; 3],
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { dims: [128; 3] }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; copied into every section that draws random numbers.
    pub seed: u64,
    pub network: NetworkConfig,
    pub training: TrainingConfig,
    pub completion: CompletionConfig,
    pub sampling: SamplingConfig,
    pub metrics: MetricsConfig,
    pub ssm: SsmFitConfig,
    pub grid: GridConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, seed_override: Option<u64>) -> CliResult<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = seed_override {
            cfg.seed = s;
        }
        cfg.propagate_seed();
        Ok(cfg)
    }

    fn propagate_seed(&mut self) {
        self.training.seed = self.seed;
        self.completion.seed = self.seed;
        self.sampling.seed = self.seed;
        self.metrics.seed = self.seed;
        self.ssm.seed = self.seed;
    }
}
