//! Stage II: gated fusion of text and verdict embeddings, a two-layer GCN,
//! node-versus-subgraph contrastive training and sampling-round scoring.
//!
//! Shapes use the row-vector convention: `X` is `n × D`, gate weights are
//! `D × D`, `W1` is `D × d`, `W2` is `d × d` and the bilinear `W` is `d × D`,
//! so a node's agreement with a subgraph readout `e` is `σ(e W hᵀ)`.

mod model;
mod params;
mod score;
mod train;

use std::fmt::{Debug, Display};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;
use serde::{Deserialize, Serialize};

pub use model::{
    backward, batch_loss, discriminate, forward, gate_activations, gate_fuse, gcn_forward,
    grad_check, grad_check_against, layer_norm, layer_norm_rows, readout, sigmoid, Batch,
    Forward, GradCheckReport, Inputs, Readout,
};
pub use params::{init_params, FusionParams, TENSOR_NAMES};
pub use score::{read_scores_csv, score_nodes, score_nodes_keyed, write_scores_csv, ScoreReport};
pub use train::{sample_batch, train, write_loss_trace, Adam, TrainOutcome};

use crate::error::{Error, Result};

/// Floating-point element type: `f32` for training, `f64` for gradient
/// checks.
pub trait Real:
    Float + LinalgScalar + ScalarOperand + Debug + Display + Default + Send + Sync + std::iter::Sum + 'static
{
    fn c(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).unwrap()
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    #[default]
    Gate,
    Mean,
    VerdictOnly,
    OrigOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub gnn_layers: usize,
    pub weight_decay: f64,
    pub hidden_dim: usize,
    pub neighbor_cap: usize,
    pub rounds: usize,
    pub fusion_mode: FusionMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::preset("cora").expect("built-in preset")
    }
}

impl TrainConfig {
    /// Per-dataset defaults: cora, pubmed, history, arxiv.
    pub fn preset(name: &str) -> Result<Self> {
        let (learning_rate, epochs, batch_size, weight_decay) = match name {
            "cora" => (3e-3, 25, 256, 1e-4),
            "pubmed" => (5e-4, 100, 512, 1e-4),
            "history" => (5e-3, 25, 512, 0.0),
            "arxiv" => (5e-3, 100, 256, 1e-3),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown preset {other:?}; expected cora, pubmed, history or arxiv"
                )))
            }
        };
        Ok(TrainConfig {
            learning_rate,
            epochs,
            batch_size,
            gnn_layers: 2,
            weight_decay,
            hidden_dim: 64,
            neighbor_cap: 8,
            rounds: 256,
            fusion_mode: FusionMode::Gate,
            seed: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("train.{name} must be positive")))
            }
        };
        positive("learning_rate", self.learning_rate > 0.0 && self.learning_rate.is_finite())?;
        positive("batch_size", self.batch_size > 0)?;
        positive("hidden_dim", self.hidden_dim > 0)?;
        positive("neighbor_cap", self.neighbor_cap > 0)?;
        positive("rounds", self.rounds > 0)?;
        if self.gnn_layers != 2 {
            return Err(Error::InvalidConfig(format!(
                "train.gnn_layers: only 2 layers are implemented, got {}",
                self.gnn_layers
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidConfig("train.weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}
