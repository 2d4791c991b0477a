//! JSON checkpoint holding the decoder and, optionally, the training codes.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Layer, NetworkConfig, NetworkParams};
use crate::training::LatentBank;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub rows: usize,
    pub cols: usize,
    /// Row-major weights.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: NetworkConfig,
    pub layers: Vec<LayerRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_bank: Option<Vec<Vec<f64>>>,
    /// Training shape ids, in latent-bank row order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape_ids: Option<Vec<String>>,
}

impl Checkpoint {
    pub fn new(params: &NetworkParams, bank: Option<&LatentBank>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            config: params.config.clone(),
            layers: params
                .layers
                .iter()
                .map(|l| LayerRecord {
                    rows: l.w.nrows(),
                    cols: l.w.ncols(),
                    w: l.w.iter().copied().collect(),
                    b: l.b.to_vec(),
                    c: l.c,
                })
                .collect(),
            latent_bank: bank.map(|b| b.codes.rows().into_iter().map(|r| r.to_vec()).collect()),
            shape_ids: None,
        }
    }

    pub fn with_shape_ids(mut self, ids: Vec<String>) -> Self {
        self.shape_ids = Some(ids);
        self
    }

    /// Latent code of a training shape by id.
    pub fn code_for(&self, id: &str) -> Result<Vec<f64>> {
        let ids = self
            .shape_ids
            .as_ref()
            .ok_or_else(|| Error::parse("checkpoint", "no shape ids recorded"))?;
        let bank = self
            .latent_bank
            .as_ref()
            .ok_or_else(|| Error::parse("checkpoint", "no latent bank stored"))?;
        let i = ids
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| Error::parse("checkpoint", format!("unknown shape id {id}")))?;
        bank.get(i)
            .cloned()
            .ok_or_else(|| Error::dims("latent bank rows", ids.len(), bank.len()))
    }

    pub fn params(&self) -> Result<NetworkParams> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::parse(
                "checkpoint",
                format!("unsupported format_version {}", self.format_version),
            ));
        }
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let w = Array2::from_shape_vec((r.rows, r.cols), r.w.clone()).map_err(|_| {
                    Error::dims(
                        format!("checkpoint layer {i} weights"),
                        r.rows * r.cols,
                        r.w.len(),
                    )
                })?;
                Ok(Layer {
                    w,
                    b: Array1::from(r.b.clone()),
                    c: r.c,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let params = NetworkParams {
            config: self.config.clone(),
            layers,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn bank(&self) -> Result<Option<LatentBank>> {
        let Some(rows) = &self.latent_bank else {
            return Ok(None);
        };
        let d = self.config.latent_dim;
        let mut codes = Array2::zeros((rows.len(), d));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::dims(
                    format!("checkpoint latent code {i}"),
                    d,
                    row.len(),
                ));
            }
            if !row.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("checkpoint latent code {i}")));
            }
            codes
                .row_mut(i)
                .assign(&ndarray::ArrayView1::from(row.as_slice()));
        }
        Ok(Some(LatentBank { codes }))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
