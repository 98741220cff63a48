//! The neural parser: a convolutional encoder and a recurrent decoder over
//! the instruction vocabulary, with hand-written backpropagation.

mod checkpoint;
mod decoder;
mod encoder;
mod gradcheck;
pub(crate) mod linalg;
mod optim;
mod params;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use decoder::DecodeTrace;
pub use encoder::{BnStats, EncodedShape};
pub use gradcheck::{grad_check, BlockReport, GradCheckConfig, GradCheckReport};
pub use optim::{Adam, Optimizer, SgdMomentum};
pub use params::{Block, PolicyConfig};
pub use train::{
    reinforce_gradient, reinforce_step, teacher_forced_accuracy, token_reward, train_supervised, BaselineState, EpochReport,
    Example, RlConfig, RlStepReport, SupervisedConfig,
};

use crate::error::{CsgError, Result};
use crate::grid::Shape;
use params::Layout;

/// Encoder output used to condition the decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    gi: Vec<f64>,
}

/// Recurrent state between decoder calls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderState {
    pub hidden: Vec<f64>,
    pub step: usize,
}

/// A next-token distribution over a fixed vocabulary whose last entry is the
/// stop symbol. Decoders are written against this so that toy distributions
/// can stand in for a trained model.
pub trait StepPolicy {
    type State: Clone;

    fn vocab_size(&self) -> usize;

    /// Maximum number of calls to [`StepPolicy::next`] per sequence.
    fn max_len(&self) -> usize;

    fn start(&self) -> Self::State;

    /// Log-probabilities of the next token after `prev` (`None` at the
    /// start), and the successor state.
    fn next(&self, state: &Self::State, prev: Option<usize>) -> (Vec<f64>, Self::State);

    fn stop_token(&self) -> usize {
        self.vocab_size() - 1
    }
}

#[derive(Clone, Debug)]
pub struct PolicyModel {
    pub(crate) config: PolicyConfig,
    pub(crate) layout: Layout,
    pub(crate) params: Vec<f64>,
    pub(crate) buffers: Vec<f64>,
}

impl PolicyModel {
    /// Randomly initialized model.
    pub fn new(config: PolicyConfig, seed: u64) -> Result<Self> {
        config.check().map_err(CsgError::InvalidConfig)?;
        let layout = Layout::new(&config);
        let (params, buffers) = layout.init(&config, seed);
        Ok(Self { config, layout, params, buffers })
    }

    /// Model with every parameter zero (BN variance buffers stay at 1).
    pub fn zeros(config: PolicyConfig) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        m.params.fill(0.0);
        Ok(m)
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[f64] {
        &self.buffers
    }

    pub fn blocks(&self) -> &[Block] {
        &self.layout.blocks
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.layout.blocks.iter().find(|b| b.name == name)
    }

    fn check_mode(&self, shape: &Shape) -> Result<()> {
        if shape.mode() != self.config.mode {
            return Err(CsgError::ModeMismatch { expected: self.config.mode.name(), found: shape.mode().name() });
        }
        Ok(())
    }

    /// Deterministic inference-mode encoding.
    pub fn encode(&self, shape: &Shape) -> Result<FeatureVector> {
        self.check_mode(shape)?;
        let enc = self.encode_with::<rand_chacha::ChaCha8Rng>(shape, None);
        Ok(FeatureVector { values: enc.feat, gi: enc.gi_feat })
    }

    /// Training-mode encoding; dropout is active when `rng` is set.
    pub fn encode_train<R: Rng + ?Sized>(&self, shape: &Shape, rng: Option<&mut R>) -> Result<EncodedShape> {
        self.check_mode(shape)?;
        Ok(self.encode_with(shape, rng))
    }

    pub fn initial_state(&self) -> DecoderState {
        DecoderState { hidden: vec![0.0; self.config.d_h], step: 0 }
    }

    /// Next-token probabilities over the whole vocabulary after `prev`
    /// (`None` for the start symbol).
    pub fn decode_step(&self, state: &DecoderState, prev: Option<usize>, feat: &FeatureVector) -> Result<(Vec<f64>, DecoderState)> {
        let (lp, next) = self.decode_step_log(state, prev, feat)?;
        Ok((lp.iter().map(|l| l.exp()).collect(), next))
    }

    /// As [`PolicyModel::decode_step`] with log-probabilities.
    pub fn decode_step_log(&self, state: &DecoderState, prev: Option<usize>, feat: &FeatureVector) -> Result<(Vec<f64>, DecoderState)> {
        if state.step >= self.config.max_len {
            return Err(CsgError::StepLimitExceeded { step: state.step, limit: self.config.max_len });
        }
        let prev = prev.unwrap_or(self.config.start_token());
        if prev > self.config.vocab_size {
            return Err(CsgError::Format { what: "token", message: format!("token {prev} outside vocabulary") });
        }
        let c = self.step_forward::<rand_chacha::ChaCha8Rng>(&feat.gi, &state.hidden, prev, None);
        Ok((c.log_probs, DecoderState { hidden: c.h, step: state.step + 1 }))
    }

    /// Teacher-forced log-likelihood of a token sequence, in inference mode.
    pub fn sequence_log_prob(&self, feat: &FeatureVector, tokens: &[usize]) -> Result<f64> {
        let mut state = self.initial_state();
        let mut prev = None;
        let mut total = 0.0;
        for &t in tokens.iter().take(self.config.max_len) {
            let (lp, next) = self.decode_step_log(&state, prev, feat)?;
            total += lp[t];
            state = next;
            prev = Some(t);
        }
        Ok(total)
    }

    /// The decoder conditioned on one shape.
    pub fn condition<'a>(&'a self, feat: &'a FeatureVector) -> Conditioned<'a> {
        Conditioned { model: self, feat }
    }

    /// Folds per-sample batch-norm statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &[BnStats]) {
        const MOMENTUM: f64 = 0.1;
        if stats.is_empty() {
            return;
        }
        for (si, slot) in self.layout.convs.iter().enumerate() {
            let Some((_, _, buf)) = slot.bn else { continue };
            for ch in 0..slot.cout {
                let n = stats.len() as f64;
                let mean = stats.iter().map(|s| s[si].0[ch]).sum::<f64>() / n;
                let var = stats.iter().map(|s| s[si].1[ch]).sum::<f64>() / n;
                let rm = &mut self.buffers[buf + ch];
                *rm = (1.0 - MOMENTUM) * *rm + MOMENTUM * mean;
                let rv = &mut self.buffers[buf + slot.cout + ch];
                *rv = (1.0 - MOMENTUM) * *rv + MOMENTUM * var;
            }
        }
    }
}

/// [`PolicyModel`] bound to an encoded shape.
#[derive(Clone, Copy)]
pub struct Conditioned<'a> {
    model: &'a PolicyModel,
    feat: &'a FeatureVector,
}

impl StepPolicy for Conditioned<'_> {
    type State = DecoderState;

    fn vocab_size(&self) -> usize {
        self.model.config.vocab_size
    }

    fn max_len(&self) -> usize {
        self.model.config.max_len
    }

    fn start(&self) -> DecoderState {
        self.model.initial_state()
    }

    fn next(&self, state: &DecoderState, prev: Option<usize>) -> (Vec<f64>, DecoderState) {
        self.model.decode_step_log(state, prev, self.feat).expect("decoders respect max_len")
    }
}
