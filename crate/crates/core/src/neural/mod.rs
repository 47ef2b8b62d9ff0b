//! Two-hidden-layer perceptrons for day-ahead prices: one network with a
//! 24-wide output (DNN24) or 24 single-output networks (DNN1).
//!
//! Layers run affine -> activation -> [batch norm] -> [dropout] for both
//! hidden layers, followed by a linear output layer. Training minimizes the
//! mean absolute error on normalized targets plus an L1 penalty on the
//! weight matrices, with Adam and early stopping on a validation set.

pub mod gradcheck;
pub mod mlp;
pub mod model;
pub mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureError;
use crate::transform::{NormMethod, TransformError};

pub use gradcheck::{check_network, gradient_check, GradCheckReport};
pub use mlp::{Activation, InitScheme, Mlp, Shape};
pub use model::{
    fit_network, split_train_validation, validation_weeks, DnnForecaster, DnnHyperparams, SplitMode, TrainValidationSplit,
    TrainedNetwork,
};
pub use train::{train, EpochRecord, TrainSettings, TrainingLog};

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("expected {expected} input columns, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite value in layer {0}")]
    NonFinite(usize),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64, log: Box<TrainingLog> },
    #[error("window of {0} days is not a whole number of weeks")]
    NotWholeWeeks(usize),
    #[error("{0} set is empty")]
    EmptySplit(&'static str),
    #[error("no network for hour {0}")]
    MissingNetwork(usize),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Transform(#[from] TransformError),
}

/// Architecture and optimizer settings of one network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden_sizes: [usize; 2],
    pub activation: Activation,
    pub dropout_rate: f64,
    pub use_batch_norm: bool,
    pub init_scheme: InitScheme,
    pub l1_coeff: f64,
    pub learning_rate: f64,
    pub output_width: usize,
    pub input_norm: NormMethod,
    pub target_norm: NormMethod,
    pub seed: u64,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m: String| Err(NeuralError::Config(m));
        if self.hidden_sizes.contains(&0) {
            return bad(format!("hidden sizes must be positive, got {:?}", self.hidden_sizes));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.l1_coeff >= 0.0 && self.l1_coeff.is_finite()) {
            return bad(format!("l1 coefficient {}", self.l1_coeff));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {}", self.learning_rate));
        }
        if self.output_width == 0 {
            return bad("output width must be positive".into());
        }
        Ok(())
    }

    pub fn shape(&self, inputs: usize) -> Shape {
        Shape { inputs, hidden: self.hidden_sizes, outputs: self.output_width, batch_norm: self.use_batch_norm }
    }
}
