use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelDims, ParamSet, ProportionsModel, TrainingHistory};
use crate::matrix::Matrix;
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "topdown-proportions/1";

#[derive(Serialize, Deserialize)]
struct Tensor {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    config: ModelConfig,
    dims: ModelDims,
    node_names: Vec<String>,
    tensors: Vec<Tensor>,
    history: TrainingHistory,
}

impl ProportionsModel {
    pub fn to_json(&self) -> Result<String> {
        let tensors = self
            .params
            .names()
            .iter()
            .zip(self.params.values())
            .map(|(name, m)| Tensor {
                name: name.clone(),
                rows: m.rows(),
                cols: m.cols(),
                data: m.as_slice().to_vec(),
            })
            .collect();
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.config.clone(),
            dims: self.dims,
            node_names: self.node_names.clone(),
            tensors,
            history: self.history.clone(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!(
                "unsupported checkpoint format {:?}, expected {CHECKPOINT_FORMAT:?}",
                ck.format
            )));
        }
        ck.config.validate()?;
        if ck.node_names.len() != ck.dims.num_nodes {
            return Err(Error::Data("checkpoint node names do not match num_nodes".into()));
        }
        let mut named = Vec::with_capacity(ck.tensors.len());
        for t in ck.tensors {
            if t.data.len() != t.rows * t.cols {
                return Err(Error::Data(format!(
                    "tensor {} holds {} values for shape ({}, {})",
                    t.name,
                    t.data.len(),
                    t.rows,
                    t.cols
                )));
            }
            named.push((t.name, Matrix::from_vec(t.rows, t.cols, t.data)));
        }
        let params = ParamSet::from_named(&ck.config, &ck.dims, named)?;
        Ok(Self {
            config: ck.config,
            dims: ck.dims,
            node_names: ck.node_names,
            params,
            history: ck.history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
