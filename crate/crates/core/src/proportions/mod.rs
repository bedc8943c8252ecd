//! The top-down proportions model.
//!
//! One global network maps a family's historical child proportions, scaled
//! parent history, covariates and learned child embeddings to Dirichlet
//! concentrations over the family's future proportions:
//!
//! 1. every child is run through an LSTM encoder-decoder independently
//!    (children form the batch axis); the encoder reads the history, the
//!    decoder reads future covariates, giving an F×C×r decoder output;
//! 2. `l` layers of multi-head self-attention across the children axis,
//!    each followed by a ReLU feed-forward layer, both with residual
//!    connections;
//! 3. a linear head with an exponential link produces F×C positive
//!    concentrations.
//!
//! Nothing in the network carries positional information along the children
//! axis, so permuting children permutes the output in the same way.

mod checkpoint;
mod network;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data_io::{TrainingWindow, WindowInputs};
use crate::dirichlet;
use crate::hierarchy::Family;
use crate::matrix::Matrix;
use crate::{Error, Result};

pub use checkpoint::CHECKPOINT_FORMAT;
pub use network::ParamSet;
pub use train::{learning_rate_at, train, Adam, EpochRecord, TrainingHistory, WindowSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// LSTM hidden size `r`.
    pub lstm_hidden: usize,
    /// Attention heads `g`.
    pub attention_heads: usize,
    /// Attention layers `l`.
    pub attention_layers: usize,
    /// Width `o` of the attention stack.
    pub ff_dim: usize,
    pub embedding_dim: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Added to target proportions inside the log-likelihood.
    pub epsilon: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr_decay_factor: f64,
    pub lr_decay_count: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            lstm_hidden: 16,
            attention_heads: 2,
            attention_layers: 1,
            ff_dim: 16,
            embedding_dim: 4,
            batch_size: 16,
            learning_rate: 1e-3,
            epsilon: 1e-4,
            max_epochs: 50,
            patience: 10,
            lr_decay_factor: 0.5,
            lr_decay_count: 8,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("lstm_hidden", self.lstm_hidden),
            ("attention_heads", self.attention_heads),
            ("ff_dim", self.ff_dim),
            ("embedding_dim", self.embedding_dim),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be >= 1")));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be > 0".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Config("lr_decay_factor must lie in (0, 1]".into()));
        }
        if !self.ff_dim.is_multiple_of(self.attention_heads) {
            return Err(Error::Config(format!(
                "ff_dim {} is not divisible by attention_heads {}",
                self.ff_dim, self.attention_heads
            )));
        }
        Ok(())
    }
}

/// Data-dependent shapes fixed at model construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub num_nodes: usize,
    pub covariate_dim: usize,
    pub history: usize,
    pub horizon: usize,
}

/// Windows of one family stacked into a minibatch.
#[derive(Debug, Clone)]
pub struct FamilyBatch<'a> {
    pub children: &'a [usize],
    pub inputs: Vec<&'a WindowInputs>,
    /// (F·b)×C targets, row `s·b + i` is step `s` of window `i`, with the
    /// mask of rows that enter the loss.
    pub targets: Option<(Matrix, Vec<bool>)>,
}

impl<'a> FamilyBatch<'a> {
    pub fn from_inputs(family: &'a Family, inputs: Vec<&'a WindowInputs>) -> Self {
        Self {
            children: &family.children,
            inputs,
            targets: None,
        }
    }

    pub fn from_windows(family: &'a Family, windows: &[&'a TrainingWindow]) -> Self {
        let b = windows.len();
        let c = family.num_children();
        let f = windows.first().map_or(0, |w| w.targets.rows());
        let mut targets = Matrix::zeros(f * b, c);
        let mut mask = vec![false; f * b];
        for (i, w) in windows.iter().enumerate() {
            for s in 0..f {
                targets.row_mut(s * b + i).copy_from_slice(w.targets.row(s));
                mask[s * b + i] = w.target_mask[s];
            }
        }
        Self {
            children: &family.children,
            inputs: windows.iter().map(|w| &w.inputs).collect(),
            targets: Some((targets, mask)),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn num_children(&self) -> usize {
        self.children.len()
    }

    /// Number of target rows that enter the loss.
    pub fn active_rows(&self) -> usize {
        self.targets
            .as_ref()
            .map_or(0, |(_, m)| m.iter().filter(|&&k| k).count())
    }
}

/// Concentrations for every window of a batch, each F×C and strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletParams {
    pub per_window: Vec<Matrix>,
}

/// Trained weights, configuration and training record.
#[derive(Debug, Clone, PartialEq)]
pub struct ProportionsModel {
    pub config: ModelConfig,
    pub dims: ModelDims,
    pub node_names: Vec<String>,
    pub params: ParamSet,
    pub history: TrainingHistory,
}

impl ProportionsModel {
    /// Freshly initialized model; weights uniform in ±1/√fan_in.
    pub fn new(config: ModelConfig, dims: ModelDims, node_names: Vec<String>) -> Result<Self> {
        config.validate()?;
        if node_names.len() != dims.num_nodes {
            return Err(Error::Dimension("node name count differs from num_nodes".into()));
        }
        let mut rng = crate::rng::stream_rng(config.seed, 0);
        let params = ParamSet::init(&config, &dims, &mut rng);
        Ok(Self {
            config,
            dims,
            node_names,
            params,
            history: TrainingHistory::default(),
        })
    }

    fn check_batch(&self, batch: &FamilyBatch<'_>) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let (h, f, d, c) = (
            self.dims.history,
            self.dims.horizon,
            self.dims.covariate_dim,
            batch.num_children(),
        );
        if let Some(&bad) = batch.children.iter().find(|&&id| id >= self.dims.num_nodes) {
            return Err(Error::Dimension(format!("child id {bad} has no embedding")));
        }
        for w in &batch.inputs {
            if w.history_props.shape() != (h, c) || w.parent_history.len() != h || w.covariates.shape() != (h + f, d) {
                return Err(Error::Dimension(format!(
                    "window shapes {:?}/{}/{:?} do not match H={h}, F={f}, C={c}, D={d}",
                    w.history_props.shape(),
                    w.parent_history.len(),
                    w.covariates.shape()
                )));
            }
        }
        if let Some((t, m)) = &batch.targets {
            if t.shape() != (f * batch.len(), c) || m.len() != t.rows() {
                return Err(Error::Dimension("target block does not match batch".into()));
            }
            if let Some(bad) = t.as_slice().iter().find(|&&v| v + self.config.epsilon <= 0.0) {
                return Err(Error::Data(format!("target {bad} + epsilon is not positive")));
            }
        }
        Ok(())
    }

    fn unstack(&self, alpha: &Matrix, b: usize) -> DirichletParams {
        let f = self.dims.horizon;
        let per_window = (0..b)
            .map(|i| {
                let idx: Vec<usize> = (0..f).map(|s| s * b + i).collect();
                alpha.select_rows(&idx)
            })
            .collect();
        DirichletParams { per_window }
    }

    /// Dirichlet concentrations for every window of `batch`.
    pub fn forward(&self, batch: &FamilyBatch<'_>) -> Result<DirichletParams> {
        self.check_batch(batch)?;
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape, false);
        let alpha = network::forward(&mut tape, &vars, &self.config, &self.dims, batch);
        let out = tape.value(alpha);
        if !out.is_finite() || out.as_slice().iter().any(|&a| a <= 0.0) {
            return Err(Error::Numerical(format!(
                "non-finite or non-positive concentration; parameter norms: {}",
                self.params.norm_report()
            )));
        }
        Ok(self.unstack(out, batch.len()))
    }

    /// Mean Dirichlet NLL of the batch targets.
    pub fn loss(&self, batch: &FamilyBatch<'_>) -> Result<f64> {
        Ok(self.loss_and_gradients(batch, false)?.0)
    }

    /// Loss and, when `with_grad`, one gradient per parameter tensor in
    /// [`ParamSet`] order.
    pub fn loss_and_gradients(&self, batch: &FamilyBatch<'_>, with_grad: bool) -> Result<(f64, Vec<Matrix>)> {
        self.check_batch(batch)?;
        let (targets, mask) = batch
            .targets
            .as_ref()
            .ok_or_else(|| Error::Data("batch has no targets".into()))?;
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape, with_grad);
        let alpha = network::forward(&mut tape, &vars, &self.config, &self.dims, batch);
        let loss = tape.dirichlet_nll(alpha, targets, mask, self.config.epsilon);
        let value = tape.value(loss).get(0, 0);
        if !with_grad {
            return Ok((value, Vec::new()));
        }
        let mut grads = tape.backward(loss);
        let out = vars
            .iter()
            .zip(self.params.values())
            .map(|(v, m)| grads.take(*v).unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols())))
            .collect();
        Ok((value, out))
    }

    /// Predicted mean proportions `b / Σb` per window.
    pub fn mean_proportions(&self, batch: &FamilyBatch<'_>) -> Result<Vec<Matrix>> {
        let params = self.forward(batch)?;
        Ok(params
            .per_window
            .iter()
            .map(|a| {
                let mut m = a.clone();
                for s in 0..m.rows() {
                    let total: f64 = m.row(s).iter().sum();
                    m.row_mut(s).iter_mut().for_each(|v| *v /= total);
                }
                m
            })
            .collect())
    }
}

/// Draws one simplex row per step from an F×C concentration slice.
pub fn sample_proportions<R: Rng + ?Sized>(params: &Matrix, rng: &mut R) -> Matrix {
    dirichlet::sample_proportions(params, rng)
}
