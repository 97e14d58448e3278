//! The instruction generator: an LSTM encoder over the question and options,
//! and an LSTM decoder that emits (operation, destination, arguments) with
//! arguments drawn from a vocabulary softmax or copied from the input or from
//! earlier instruction values. Gradients are written out by hand.

mod checkpoint;
pub(crate) mod gradcheck;
mod layers;
mod network;
mod params;
mod tensor;
mod train;
mod vocab;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use gradcheck::{gradient_check, GradCheckReport, REL_ERROR_FLOOR};
pub use layers::{Linear, LstmCell, LstmStack, LstmState};
pub use network::{
    arg_logprob, instruction_logprob, ArgContext, ArgDistribution, DecoderState, EncoderState,
    InstructionDistribution, LossOutput, ModelScorer, PartialInstruction, Predictor,
};
pub use params::{Affinity, Parameters, N_OPS, N_PREDICTORS};
pub use tensor::{log_softmax, logsumexp, Tensor};
pub use train::{train, training_examples, LogRecord, TrainExample, TrainOptions, TrainSummary};
pub use vocab::{Vocab, UNK_ID};

use crate::dsl::ExecError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("program failed to execute: {0}")]
    Exec(#[from] ExecError),
    #[error("empty program set")]
    EmptyProgramSet,
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub embed_size: usize,
    pub vocab_size: usize,
    pub lstm_layers: usize,
    /// Instructions per staged back-propagation slice.
    pub slice_k: usize,
    /// Induced programs kept per example for the marginal.
    pub samples_per_example: usize,
    pub learning_rate: f64,
    /// Factor applied to the step size when the dev loss stops improving.
    pub lr_decay: f64,
    pub clip_norm: f64,
    pub init_scale: f64,
    /// Arguments may be copied from the input.
    pub copy_input: bool,
    /// Arguments may be copied from earlier instruction values.
    pub copy_output: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_size: 200,
            embed_size: 200,
            vocab_size: 20_000,
            lstm_layers: 2,
            slice_k: 100,
            samples_per_example: 8,
            learning_rate: 0.1,
            lr_decay: 0.5,
            clip_norm: 5.0,
            init_scale: 0.08,
            copy_input: true,
            copy_output: true,
        }
    }
}

impl ModelConfig {
    /// Small dimensions for tests and gradient checks.
    pub fn toy() -> Self {
        ModelConfig { hidden_size: 8, embed_size: 6, vocab_size: 40, lstm_layers: 2, slice_k: 100, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let sizes = [self.hidden_size, self.embed_size, self.vocab_size, self.lstm_layers, self.slice_k, self.samples_per_example];
        if sizes.contains(&0) {
            return Err(ModelError::Invalid("model sizes and slice length must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.clip_norm > 0.0 && self.init_scale > 0.0) {
            return Err(ModelError::Invalid("learning rate, clip norm and init scale must be positive".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(ModelError::Invalid("lr_decay must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Configuration, vocabulary and weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: Parameters,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Self {
        let params = Parameters::init(&config, vocab.len(), seed);
        Model { config, vocab, params }
    }
}
