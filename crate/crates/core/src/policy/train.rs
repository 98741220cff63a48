//! Maximum-likelihood training and the REINFORCE policy-gradient step.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::BnStats;
use super::optim::{Adam, Optimizer, SgdMomentum};
use super::PolicyModel;
use crate::error::{CsgError, Result};
use crate::exec::execute;
use crate::grid::Shape;
use crate::metrics::{RewardConfig, RewardValue, Target};
use crate::program::Program;
use crate::vocab::Vocabulary;

/// A rendered shape and the token ids of its program, stop included.
#[derive(Clone, Debug)]
pub struct Example {
    pub shape: Shape,
    pub tokens: Vec<usize>,
}

impl Example {
    pub fn from_program(p: &Program, vocab: &Vocabulary) -> Result<Self> {
        let shape = execute(p)?;
        let tokens = vocab.encode(&p.with_stop()).ok_or_else(|| CsgError::Format {
            what: "training program",
            message: format!("{p} uses instructions outside the vocabulary"),
        })?;
        Ok(Self { shape, tokens })
    }
}

impl PolicyModel {
    fn check_example(&self, ex: &Example) -> Result<()> {
        let stop = self.config.stop_token();
        if ex.tokens.last() != Some(&stop) || ex.tokens[..ex.tokens.len() - 1].contains(&stop) {
            return Err(CsgError::Format { what: "training example", message: "tokens must end with a single stop".into() });
        }
        if ex.tokens.len() - 1 > self.config.max_len {
            return Err(CsgError::TooLong { len: ex.tokens.len() - 1, max: self.config.max_len });
        }
        if ex.tokens.iter().any(|&t| t >= self.config.vocab_size) {
            return Err(CsgError::Format { what: "training example", message: "token outside vocabulary".into() });
        }
        Ok(())
    }

    fn loss_and_grad<R: Rng + ?Sized>(&self, batch: &[Example], mut dropout: Option<&mut R>) -> Result<(f64, Vec<f64>, Vec<BnStats>)> {
        let mut grads = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let mut stats = Vec::new();
        for ex in batch {
            self.check_example(ex)?;
            let enc = self.encode_train(&ex.shape, dropout.as_deref_mut())?;
            let trace = self.teacher_forced(&enc, &ex.tokens, dropout.as_deref_mut());
            loss -= trace.total_log_prob();
            let weights = vec![1.0; trace.tokens.len()];
            let mut dfeat = vec![0.0; self.config.d_enc];
            self.decoder_backward(&enc, &trace, &weights, &mut grads, &mut dfeat);
            self.encoder_backward(&enc, &dfeat, &mut grads);
            stats.push(enc.cache.bn_stats);
        }
        Ok((loss, grads, stats))
    }

    /// Inference-mode loss of `batch` and a hash of every relu and max-pool
    /// decision taken while computing it.
    pub(crate) fn loss_with_pattern(&self, batch: &[Example]) -> Result<(f64, u64)> {
        use std::hash::Hasher;
        let mut h = std::collections::hash_map::DefaultHasher::new();
        let mut loss = 0.0;
        for ex in batch {
            self.check_example(ex)?;
            let enc = self.encode_train::<ChaCha8Rng>(&ex.shape, None)?;
            let trace = self.teacher_forced::<ChaCha8Rng>(&enc, &ex.tokens, None);
            loss -= trace.total_log_prob();
            enc.hash_pattern(&mut h);
            trace.hash_pattern(&mut h);
        }
        Ok((loss, h.finish()))
    }

    /// Summed teacher-forced negative log-likelihood of `batch` and its
    /// gradient. Dropout is active when `dropout` is set.
    pub fn supervised_loss<R: Rng + ?Sized>(&self, batch: &[Example], dropout: Option<&mut R>) -> Result<(f64, Vec<f64>)> {
        self.loss_and_grad(batch, dropout).map(|(l, g, _)| (l, g))
    }
}

/// Fraction of teacher-forced steps whose argmax (lowest index on ties)
/// equals the target, in inference mode.
pub fn teacher_forced_accuracy(model: &PolicyModel, data: &[Example]) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for ex in data {
        model.check_example(ex)?;
        let feat = model.encode(&ex.shape)?;
        let mut state = model.initial_state();
        let mut prev = None;
        for &t in ex.tokens.iter().take(model.config.max_len) {
            let (lp, next) = model.decode_step_log(&state, prev, &feat)?;
            let best = lp.iter().enumerate().fold(0, |b, (i, &v)| if v > lp[b] { i } else { b });
            correct += (best == t) as usize;
            total += 1;
            state = next;
            prev = Some(t);
        }
    }
    Ok(if total == 0 { 1.0 } else { correct as f64 / total as f64 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupervisedConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Apply the model's dropout rate while training.
    pub dropout: bool,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 32, lr: 1e-3, seed: 0, dropout: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub steps: usize,
    /// Mean negative log-likelihood per program over the epoch.
    pub mean_loss: f64,
}

/// Minibatch Adam on the mean per-program loss. `on_epoch` sees each
/// finished epoch and may stop training by returning `false`.
pub fn train_supervised(
    model: &mut PolicyModel,
    data: &[Example],
    cfg: &SupervisedConfig,
    mut on_epoch: impl FnMut(&EpochReport, &PolicyModel) -> bool,
) -> Result<Vec<EpochReport>> {
    if data.is_empty() {
        return Err(CsgError::EmptyTrainset);
    }
    if cfg.batch_size == 0 {
        return Err(CsgError::InvalidConfig("batch_size must be positive".into()));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    drop_rng.set_stream(1);
    let mut opt = Adam::new(model.params.len(), cfg.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut reports = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| data[i].clone()).collect();
            let dropout = (cfg.dropout && model.config.dropout > 0.0).then_some(&mut drop_rng);
            let (loss, mut grads, stats) = model.loss_and_grad(&batch, dropout)?;
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            opt.step(&mut model.params, &grads);
            model.update_running_stats(&stats);
            epoch_loss += loss;
            steps += 1;
        }
        let report = EpochReport { epoch, steps, mean_loss: epoch_loss / data.len() as f64 };
        let go_on = on_epoch(&report, model);
        reports.push(report);
        if !go_on {
            break;
        }
    }
    Ok(reports)
}

/// Running average of observed batch-mean rewards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineState {
    pub b: f64,
    pub momentum: f64,
}

impl Default for BaselineState {
    fn default() -> Self {
        Self { b: 0.0, momentum: 0.9 }
    }
}

impl BaselineState {
    pub fn update(&mut self, batch_mean: f64) {
        self.b = self.momentum * self.b + (1.0 - self.momentum) * batch_mean;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlConfig {
    /// Programs sampled per shape, S.
    pub samples: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub reward: RewardConfig,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self { samples: 1, batch_size: 32, lr: 0.01, momentum: 0.9, reward: RewardConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlStepReport {
    pub mean_reward: f64,
    /// Baseline used for this step's advantages.
    pub baseline: f64,
    pub grad_norm: f64,
}

/// Reward of a sampled token sequence (stop appended if absent).
pub fn token_reward(vocab: &Vocabulary, target: &Target, tokens: &[usize], cfg: &RewardConfig) -> RewardValue {
    match vocab.decode(tokens, cfg.max_len) {
        Ok(p) => target.reward(&p.with_stop(), cfg),
        Err(_) => RewardValue::INVALID,
    }
}

/// Monte-Carlo policy-gradient estimate
/// `(1/(S·B)) Σ_i Σ_s (R_is − b) Σ_t ∇ log π(a_t | ·)`, the ascent
/// direction of expected reward, together with the mean sampled reward.
/// `reward(i, tokens)` scores a sequence (always ending in stop) for shape `i`.
pub fn reinforce_gradient<R: Rng + ?Sized>(
    model: &PolicyModel,
    shapes: &[Shape],
    samples: usize,
    baseline: f64,
    mut reward: impl FnMut(usize, &[usize]) -> f64,
    rng: &mut R,
) -> Result<(Vec<f64>, f64)> {
    if samples == 0 {
        return Err(CsgError::InvalidConfig("samples per shape must be at least 1".into()));
    }
    let stop = model.config.stop_token();
    let mut grads = vec![0.0; model.params.len()];
    let n = (shapes.len() * samples) as f64;
    let mut total = 0.0;
    for (i, shape) in shapes.iter().enumerate() {
        let enc = model.encode_train::<ChaCha8Rng>(shape, None)?;
        let mut dfeat = vec![0.0; model.config.d_enc];
        for _ in 0..samples {
            let trace = model.sample_trace::<R, ChaCha8Rng>(&enc, rng, None);
            let mut tokens = trace.tokens.clone();
            if !trace.stopped(stop) {
                tokens.push(stop);
            }
            let r = reward(i, &tokens);
            total += r;
            let adv = (r - baseline) / n;
            if adv != 0.0 {
                let weights = vec![adv; trace.tokens.len()];
                model.decoder_backward(&enc, &trace, &weights, &mut grads, &mut dfeat);
            }
        }
        if dfeat.iter().any(|&d| d != 0.0) {
            model.encoder_backward(&enc, &dfeat, &mut grads);
        }
    }
    // the backward pass produced the gradient of −J
    grads.iter_mut().for_each(|g| *g = -*g);
    let mean = if shapes.is_empty() { 0.0 } else { total / n };
    Ok((grads, mean))
}

/// One REINFORCE update: estimate the gradient against the current
/// baseline, ascend with momentum SGD, then fold the batch mean into the
/// baseline.
pub fn reinforce_step<R: Rng + ?Sized>(
    model: &mut PolicyModel,
    shapes: &[Shape],
    baseline: &mut BaselineState,
    opt: &mut SgdMomentum,
    samples: usize,
    reward: impl FnMut(usize, &[usize]) -> f64,
    rng: &mut R,
) -> Result<RlStepReport> {
    let b = baseline.b;
    let (ascent, mean_reward) = reinforce_gradient(model, shapes, samples, b, reward, rng)?;
    let descent: Vec<f64> = ascent.iter().map(|g| -g).collect();
    opt.step(&mut model.params, &descent);
    baseline.update(mean_reward);
    let grad_norm = ascent.iter().map(|g| g * g).sum::<f64>().sqrt();
    Ok(RlStepReport { mean_reward, baseline: b, grad_norm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyConfig;
    use crate::program::Mode;

    fn toy(v: usize, max_len: usize) -> PolicyModel {
        let cfg = PolicyConfig {
            conv_widths: vec![2, 2, 2],
            d_enc: 6,
            d_emb: 3,
            d_h: 5,
            dropout: 0.0,
            max_len,
            ..PolicyConfig::desk(Mode::Two, v)
        };
        PolicyModel::new(cfg, 11).unwrap()
    }

    fn shape(text: &str) -> Shape {
        execute(&Program::parse(text, Mode::Two).unwrap()).unwrap()
    }

    #[test]
    fn uniform_model_loss_is_length_times_log_v() {
        let mut m = toy(10, 13);
        for name in ["out.weight", "out.bias"] {
            let b = m.block(name).unwrap().clone();
            m.params_mut()[b.offset..b.offset + b.len].fill(0.0);
        }
        let ex = Example { shape: shape("c(32,32,16)"), tokens: vec![1, 4, 8, 9] };
        let (loss, _) = m.supervised_loss::<ChaCha8Rng>(&[ex], None).unwrap();
        assert!((loss - 4.0 * 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_model_has_zero_loss() {
        // a huge bias on the target token makes every step certain
        let mut m = toy(4, 13);
        let b = m.block("out.bias").unwrap().clone();
        let w = m.block("out.weight").unwrap().clone();
        m.params_mut()[w.offset..w.offset + w.len].fill(0.0);
        m.params_mut()[b.offset + 3] = 1e3;
        let ex = Example { shape: shape("c(32,32,16)"), tokens: vec![3] };
        let (loss, _) = m.supervised_loss::<ChaCha8Rng>(&[ex], None).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn stop_of_a_full_length_program_is_not_scored() {
        let m = toy(6, 3);
        let full = Example { shape: shape("c(32,32,16)"), tokens: vec![0, 1, 2, 5] };
        let trimmed = m.encode(&full.shape).unwrap();
        let (loss, _) = m.supervised_loss::<ChaCha8Rng>(&[full], None).unwrap();
        assert!((loss + m.sequence_log_prob(&trimmed, &[0, 1, 2]).unwrap()).abs() < 1e-12);
        let long = Example { shape: shape("c(32,32,16)"), tokens: vec![0, 1, 2, 3, 5] };
        assert!(matches!(m.supervised_loss::<ChaCha8Rng>(&[long], None), Err(CsgError::TooLong { .. })));
    }

    #[test]
    fn small_lr_descends_on_a_fixed_batch() {
        let mut m = toy(8, 13);
        let batch = vec![
            Example { shape: shape("c(32,32,16)"), tokens: vec![1, 2, 4, 7] },
            Example { shape: shape("s(24,24,8)"), tokens: vec![3, 7] },
        ];
        let mut opt = Adam::new(m.num_params(), 1e-4);
        let mut last = f64::INFINITY;
        for _ in 0..10 {
            let (loss, grads) = m.supervised_loss::<ChaCha8Rng>(&batch, None).unwrap();
            assert!(loss <= last + 1e-12, "{loss} > {last}");
            last = loss;
            opt.step(&mut m.params, &grads);
        }
    }

    #[test]
    fn training_is_reproducible() {
        let data = vec![
            Example { shape: shape("c(32,32,16)"), tokens: vec![1, 7] },
            Example { shape: shape("s(24,24,8)"), tokens: vec![3, 7] },
            Example { shape: shape("t(32,32,16)"), tokens: vec![2, 5, 6, 7] },
        ];
        let cfg = SupervisedConfig { epochs: 3, batch_size: 2, lr: 1e-3, seed: 9, dropout: true };
        let mut a = toy(8, 13);
        let mut b = toy(8, 13);
        a.config.dropout = 0.2;
        b.config.dropout = 0.2;
        let ra = train_supervised(&mut a, &data, &cfg, |_, _| true).unwrap();
        let rb = train_supervised(&mut b, &data, &cfg, |_, _| true).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.params, b.params);
        assert_eq!(ra.len(), 3);
        assert!(train_supervised(&mut a, &[], &cfg, |_, _| true).is_err());
    }

    #[test]
    fn constant_advantage_gives_zero_gradient() {
        let m = toy(5, 4);
        let shapes = vec![shape("c(32,32,16)"), shape("s(24,24,8)")];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (g, mean) = reinforce_gradient(&m, &shapes, 3, 0.7, |_, _| 0.7, &mut rng).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
        assert!((mean - 0.7).abs() < 1e-15);
        let (_, zero) = reinforce_gradient(&m, &shapes, 2, 0.0, |_, _| 0.0, &mut rng).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn sampled_sequences_end_in_stop() {
        let m = toy(5, 3);
        let shapes = vec![shape("c(32,32,16)")];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut seen = Vec::new();
        reinforce_gradient(&m, &shapes, 50, 0.0, |_, t| {
            seen.push(t.to_vec());
            0.0
        }, &mut rng)
        .unwrap();
        for t in &seen {
            assert_eq!(t.last(), Some(&4));
            assert!(t.len() <= 4);
            assert!(!t[..t.len() - 1].contains(&4));
        }
    }

    #[test]
    fn baseline_is_a_running_average() {
        let mut b = BaselineState::default();
        b.update(1.0);
        assert!((b.b - 0.1).abs() < 1e-15);
        b.update(1.0);
        assert!((b.b - 0.19).abs() < 1e-15);
    }
}
