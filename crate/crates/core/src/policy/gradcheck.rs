//! Finite-difference verification of the analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::Example;
use super::PolicyModel;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Magnitudes below this count as this in the relative error.
    pub floor: f64,
    /// Check a random subset of each block; all entries when `None`.
    pub max_per_block: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { eps: 1e-4, floor: 1e-5, max_per_block: None, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub name: String,
    pub checked: usize,
    /// Over entries whose ±eps probes keep every relu and pooling decision.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Entries whose probes flip a relu or pooling winner. The central
    /// difference there straddles a kink and is reported apart.
    pub kinked: usize,
    pub max_rel_error_kinked: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
    pub max_rel_error: f64,
    pub kinked: usize,
}

/// Relative error `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the gradient of the summed supervised loss on `batch` (dropout
/// off) against central differences, block by block. Entries whose probes
/// change the activation pattern are counted in `kinked` and kept out of
/// `max_rel_error`.
pub fn grad_check(model: &PolicyModel, batch: &[Example], cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let (_, analytic) = model.supervised_loss::<ChaCha8Rng>(batch, None)?;
    let (_, base) = model.loss_with_pattern(batch)?;
    let mut probe = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut blocks = Vec::new();
    for b in &model.layout.blocks {
        let idx: Vec<usize> = match cfg.max_per_block {
            Some(k) if k < b.len => sample(&mut rng, b.len, k).into_iter().collect(),
            _ => (0..b.len).collect(),
        };
        let mut report = BlockReport {
            name: b.name.clone(),
            checked: idx.len(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            kinked: 0,
            max_rel_error_kinked: 0.0,
        };
        for i in idx {
            let at = b.offset + i;
            let orig = probe.params[at];
            probe.params[at] = orig + cfg.eps;
            let (up, pu) = probe.loss_with_pattern(batch)?;
            probe.params[at] = orig - cfg.eps;
            let (down, pd) = probe.loss_with_pattern(batch)?;
            probe.params[at] = orig;
            let numeric = (up - down) / (2.0 * cfg.eps);
            let a = analytic[at];
            let rel = relative_error(a, numeric, cfg.floor);
            if pu != base || pd != base {
                report.kinked += 1;
                report.max_rel_error_kinked = report.max_rel_error_kinked.max(rel);
                continue;
            }
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            report.max_rel_error = report.max_rel_error.max(rel);
        }
        blocks.push(report);
    }
    let max_rel_error = blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max);
    let kinked = blocks.iter().map(|b| b.kinked).sum();
    Ok(GradCheckReport { blocks, max_rel_error, kinked })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::execute;
    use crate::policy::PolicyConfig;
    use crate::program::{Mode, Program};

    fn toy_batch(v: usize) -> Vec<Example> {
        let s = |t: &str| execute(&Program::parse(t, Mode::Two).unwrap()).unwrap();
        vec![
            Example { shape: s("c(32,32,16) s(24,40,12) union"), tokens: vec![2, 1, v - 3, v - 1] },
            Example { shape: s("t(40,32,16)"), tokens: vec![1, v - 1] },
        ]
    }

    #[test]
    fn analytic_gradient_matches_differences() {
        let v = 12;
        let cfg = PolicyConfig { conv_widths: vec![2, 2, 2], d_enc: 6, d_emb: 4, d_h: 8, ..PolicyConfig::desk(Mode::Two, v) };
        let m = PolicyModel::new(cfg, 21).unwrap();
        let r = grad_check(&m, &toy_batch(v), &GradCheckConfig { max_per_block: Some(40), ..Default::default() }).unwrap();
        assert_eq!(r.blocks.len(), m.blocks().len());
        assert!(r.max_rel_error < 1e-3, "{r:#?}");
    }

    #[test]
    fn voxel_encoder_with_batch_norm() {
        let v = 5;
        let cfg = PolicyConfig { conv_widths: vec![1, 2], d_enc: 4, d_emb: 2, d_h: 3, ..PolicyConfig::desk(Mode::Three, v) };
        let mut m = PolicyModel::new(cfg, 4).unwrap();
        m.buffers = vec![0.3, 1.5, 0.5, -0.2, 2.0, 0.7];
        assert_eq!(m.buffers().len(), 6);
        let s = execute(&Program::parse("sp(32,32,32,16) cu(24,24,40,8) subtract", Mode::Three).unwrap()).unwrap();
        let batch = vec![Example { shape: s, tokens: vec![0, 2, v - 1] }];
        let r = grad_check(&m, &batch, &GradCheckConfig { max_per_block: Some(3), ..Default::default() }).unwrap();
        assert!(r.blocks.iter().any(|b| b.name == "bn1.gamma"));
        assert!(r.max_rel_error < 1e-3, "{r:#?}");
    }

    #[test]
    fn probes_across_a_switch_are_set_apart() {
        let v = 12;
        let cfg = PolicyConfig { conv_widths: vec![2, 2, 2], d_enc: 6, d_emb: 4, d_h: 8, ..PolicyConfig::desk(Mode::Two, v) };
        let m = PolicyModel::new(cfg, 4).unwrap();
        let r = grad_check(&m, &toy_batch(v), &GradCheckConfig::default()).unwrap();
        assert!(r.kinked >= 1);
        assert!(r.blocks.iter().any(|b| b.max_rel_error_kinked > 1e-3), "{r:#?}");
        assert!(r.max_rel_error < 1e-3, "{r:#?}");
        let (_, a) = m.loss_with_pattern(&toy_batch(v)).unwrap();
        let (_, b) = m.loss_with_pattern(&toy_batch(v)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_model_passes() {
        let v = 6;
        let cfg = PolicyConfig { conv_widths: vec![1, 1, 1], d_enc: 4, d_emb: 2, d_h: 3, ..PolicyConfig::desk(Mode::Two, v) };
        let m = PolicyModel::zeros(cfg).unwrap();
        let r = grad_check(&m, &toy_batch(v), &GradCheckConfig { max_per_block: Some(10), ..Default::default() }).unwrap();
        assert!(r.max_rel_error < 1e-3, "{r:#?}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0, 1e-6), 0.0);
        assert!((relative_error(1e-9, 2e-9, 1e-6) - 1e-3).abs() < 1e-12);
        assert!((relative_error(1.0, 1.001, 1e-6) - 0.001 / 1.001).abs() < 1e-12);
    }
}
