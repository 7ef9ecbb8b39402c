//! Residual CNN over the DDM with a dense ancillary branch.
//!
//! Topology:
//!
//! ```text
//! ddm 1x17x11 -> [block: conv k×k 'same' -> leaky -> conv -> (+ shortcut) -> leaky] x N
//!             -> max pool -> flatten --------------------------+
//! ancillary A -> dense -> leaky -------------------------------+-> concat
//!             -> dense -> leaky -> dropout -> dense -> leaky -> dropout -> dense(1) -> softplus
//! ```
//!
//! The shortcut adds the block input to the block output, zero-padding
//! channels when the block widens.

mod gradcheck;
mod layers;
mod lr_finder;
mod network;
mod train;
mod weights;

pub use gradcheck::{find_probe_point, gradient_check, ProbePoint, TensorError};
pub use lr_finder::{find_lr_range, LrFinderConfig, LrRange, LrSweep, SweepTarget};
pub use network::{build_network, LayerShape, Mode, Network, TensorSpec};
pub use train::{train, EpochLoss, LrSchedule, TensorSet, TrainConfig, TrainOutcome};
pub use weights::{config_hash, load_weights, save_weights, ModelWeights, Provenance, WeightsMetadata};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::warehouse::{DDM_DELAY_ROWS, DDM_DOPPLER_COLS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    #[default]
    Softplus,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    #[default]
    HeUniform,
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub residual_blocks: usize,
    pub conv_per_block: usize,
    pub kernel: usize,
    /// Output channels of each residual block.
    pub channels: Vec<usize>,
    pub leaky_relu_slope: f64,
    pub pool: usize,
    pub ancillary_dense_width: usize,
    pub head_dense_widths: Vec<usize>,
    pub dropout_p: f64,
    pub output_activation: OutputActivation,
    /// False removes the DDM branch entirely.
    pub use_ddm: bool,
    /// Names of the scalar inputs, in feature-vector order.
    pub ancillary_inputs: Vec<String>,
    pub init: InitScheme,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            residual_blocks: 2,
            conv_per_block: 2,
            kernel: 3,
            channels: vec![16, 32],
            leaky_relu_slope: 0.01,
            pool: 2,
            ancillary_dense_width: 32,
            head_dense_widths: vec![64, 32],
            dropout_p: 0.02,
            output_activation: OutputActivation::Softplus,
            use_ddm: true,
            ancillary_inputs: crate::conditioning::ALL_FEATURES.iter().map(|f| f.name()).collect(),
            init: InitScheme::HeUniform,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn ddm_shape() -> (usize, usize) {
        (DDM_DELAY_ROWS, DDM_DOPPLER_COLS)
    }

    pub fn n_ancillary(&self) -> usize {
        self.ancillary_inputs.len()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid network configuration at {layer}: {msg}")]
    Config { layer: String, msg: String },
    #[error("input shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite input {feature} in sample {sample}")]
    NonFinite { feature: String, sample: usize },
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid training configuration: {0}")]
    TrainConfig(String),
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error("learning-rate range finder: {0}")]
    LrFinder(String),
    #[error("weight file: {0}")]
    Weights(String),
    #[error("config hash mismatch: file {file}, network {network}")]
    ConfigMismatch { file: String, network: String },
}
