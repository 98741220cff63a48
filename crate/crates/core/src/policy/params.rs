//! Architecture configuration and the flat parameter store.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::SIZE;
use crate::program::{Mode, DEFAULT_MAX_LEN};

/// Architecture and regularization settings of a [`super::PolicyModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub mode: Mode,
    /// Output classes; the last one is the stop symbol.
    pub vocab_size: usize,
    /// One conv stage (conv, relu, 2× max-pool) per entry.
    pub conv_widths: Vec<usize>,
    pub d_enc: usize,
    pub d_emb: usize,
    pub d_h: usize,
    pub dropout: f64,
    /// Batch norm after each pooled stage.
    pub batch_norm: bool,
    /// Maximum number of decoder calls, T.
    pub max_len: usize,
}

impl PolicyConfig {
    /// Desk-scale defaults for a mode.
    pub fn desk(mode: Mode, vocab_size: usize) -> Self {
        match mode {
            Mode::Two => Self {
                mode,
                vocab_size,
                conv_widths: vec![8, 16, 32],
                d_enc: 256,
                d_emb: 64,
                d_h: 256,
                dropout: 0.2,
                batch_norm: false,
                max_len: DEFAULT_MAX_LEN,
            },
            Mode::Three => Self {
                mode,
                vocab_size,
                conv_widths: vec![8, 16, 16, 32, 32],
                d_enc: 256,
                d_emb: 64,
                d_h: 256,
                dropout: 0.2,
                batch_norm: true,
                max_len: DEFAULT_MAX_LEN,
            },
        }
    }

    /// Full-size widths; too slow to train on one core.
    pub fn full(mode: Mode, vocab_size: usize) -> Self {
        match mode {
            Mode::Two => Self {
                conv_widths: vec![8, 16, 32],
                d_enc: 2048,
                d_emb: 128,
                d_h: 2048,
                ..Self::desk(mode, vocab_size)
            },
            Mode::Three => Self {
                conv_widths: vec![32, 64, 128, 256, 256],
                d_enc: 2048,
                d_emb: 128,
                d_h: 2048,
                ..Self::desk(mode, vocab_size)
            },
        }
    }

    pub fn stop_token(&self) -> usize {
        self.vocab_size - 1
    }

    /// Id fed to the embedding before the first instruction.
    pub fn start_token(&self) -> usize {
        self.vocab_size
    }

    pub(crate) fn depth_of_input(&self) -> usize {
        match self.mode {
            Mode::Two => 1,
            Mode::Three => SIZE,
        }
    }

    pub(crate) fn kernel(&self) -> (usize, usize, usize) {
        match self.mode {
            Mode::Two => (1, 3, 3),
            Mode::Three => (3, 3, 3),
        }
    }

    /// Spatial dims `(d, h, w)` at the input of stage `i`.
    pub(crate) fn stage_dims(&self, i: usize) -> (usize, usize, usize) {
        let hw = SIZE >> i;
        let d = match self.mode {
            Mode::Two => 1,
            Mode::Three => self.depth_of_input() >> i,
        };
        (d, hw, hw)
    }

    pub(crate) fn flat_len(&self) -> usize {
        let n = self.conv_widths.len();
        let (d, h, w) = self.stage_dims(n);
        self.conv_widths.last().copied().unwrap_or(1) * d * h * w
    }

    pub(crate) fn has_projection(&self) -> bool {
        self.flat_len() != self.d_enc
    }

    pub(crate) fn check(&self) -> Result<(), String> {
        if self.vocab_size < 2 {
            return Err("vocab_size must be at least 2".into());
        }
        if self.conv_widths.is_empty() || self.conv_widths.contains(&0) {
            return Err("conv_widths must be nonempty and positive".into());
        }
        if (SIZE >> self.conv_widths.len()) == 0 {
            return Err("too many conv stages for a 64 grid".into());
        }
        if self.d_enc == 0 || self.d_emb == 0 || self.d_h == 0 {
            return Err("layer widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err("dropout must lie in [0, 1)".into());
        }
        if self.max_len == 0 {
            return Err("max_len must be positive".into());
        }
        Ok(())
    }
}

/// A named slice of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Offsets of each layer inside the flat vector.
#[derive(Clone, Debug)]
pub(crate) struct ConvSlot {
    pub cin: usize,
    pub cout: usize,
    pub weight: usize,
    pub bias: usize,
    /// `(gamma, beta)` offsets and buffer offset for running mean/var.
    pub bn: Option<(usize, usize, usize)>,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub convs: Vec<ConvSlot>,
    pub proj: Option<(usize, usize)>,
    pub emb_w: usize,
    pub emb_b: usize,
    pub w_ih: usize,
    pub w_hh: usize,
    pub b_ih: usize,
    pub b_hh: usize,
    pub fc1_w: usize,
    pub fc1_b: usize,
    pub out_w: usize,
    pub out_b: usize,
    pub blocks: Vec<Block>,
    pub n_params: usize,
    pub n_buffers: usize,
}

impl Layout {
    pub fn new(cfg: &PolicyConfig) -> Self {
        let mut blocks = Vec::new();
        let mut next = 0usize;
        let mut add = |name: String, shape: Vec<usize>| {
            let len = shape.iter().product();
            blocks.push(Block { name, shape, offset: next, len });
            next += len;
            next - len
        };
        let (kd, kh, kw) = cfg.kernel();
        let mut convs = Vec::new();
        let mut cin = 1;
        let mut n_buffers = 0;
        for (i, &cout) in cfg.conv_widths.iter().enumerate() {
            let weight = add(format!("conv{i}.weight"), vec![cout, cin, kd, kh, kw]);
            let bias = add(format!("conv{i}.bias"), vec![cout]);
            let bn = cfg.batch_norm.then(|| {
                let g = add(format!("bn{i}.gamma"), vec![cout]);
                let b = add(format!("bn{i}.beta"), vec![cout]);
                let buf = n_buffers;
                n_buffers += 2 * cout;
                (g, b, buf)
            });
            convs.push(ConvSlot { cin, cout, weight, bias, bn });
            cin = cout;
        }
        let proj = cfg.has_projection().then(|| {
            let w = add("proj.weight".into(), vec![cfg.d_enc, cfg.flat_len()]);
            let b = add("proj.bias".into(), vec![cfg.d_enc]);
            (w, b)
        });
        let v = cfg.vocab_size;
        let emb_w = add("embed.weight".into(), vec![cfg.d_emb, v + 1]);
        let emb_b = add("embed.bias".into(), vec![cfg.d_emb]);
        let g = 3 * cfg.d_h;
        let w_ih = add("gru.weight_ih".into(), vec![g, cfg.d_enc + cfg.d_emb]);
        let w_hh = add("gru.weight_hh".into(), vec![g, cfg.d_h]);
        let b_ih = add("gru.bias_ih".into(), vec![g]);
        let b_hh = add("gru.bias_hh".into(), vec![g]);
        let fc1_w = add("fc1.weight".into(), vec![cfg.d_h, cfg.d_h]);
        let fc1_b = add("fc1.bias".into(), vec![cfg.d_h]);
        let out_w = add("out.weight".into(), vec![v, cfg.d_h]);
        let out_b = add("out.bias".into(), vec![v]);
        Self {
            convs,
            proj,
            emb_w,
            emb_b,
            w_ih,
            w_hh,
            b_ih,
            b_hh,
            fc1_w,
            fc1_b,
            out_w,
            out_b,
            blocks,
            n_params: next,
            n_buffers,
        }
    }

    /// Initial parameters: uniform in ±1/√fan_in per layer, unit BN scale.
    pub fn init(&self, cfg: &PolicyConfig, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; self.n_params];
        for b in &self.blocks {
            let slot = &mut params[b.offset..b.offset + b.len];
            if b.name.ends_with(".gamma") {
                slot.fill(1.0);
                continue;
            }
            if b.name.ends_with(".beta") {
                continue;
            }
            let fan_in = if b.name.starts_with("gru.") {
                cfg.d_h
            } else if b.name.ends_with(".bias") {
                let w = self.blocks.iter().find(|w| w.name == b.name.replace(".bias", ".weight")).expect("weight block");
                w.shape[1..].iter().product()
            } else {
                b.shape[1..].iter().product()
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in slot.iter_mut() {
                *p = rng.gen_range(-bound..bound);
            }
        }
        let mut buffers = vec![0.0; self.n_buffers];
        for c in &self.convs {
            if let Some((_, _, buf)) = c.bn {
                buffers[buf + c.cout..buf + 2 * c.cout].fill(1.0);
            }
        }
        (params, buffers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_tile_the_vector() {
        for mode in [Mode::Two, Mode::Three] {
            let cfg = PolicyConfig::desk(mode, 20);
            let l = Layout::new(&cfg);
            let mut at = 0;
            for b in &l.blocks {
                assert_eq!(b.offset, at, "{}", b.name);
                assert_eq!(b.len, b.shape.iter().product::<usize>());
                at += b.len;
            }
            assert_eq!(at, l.n_params);
        }
    }

    #[test]
    fn flat_sizes() {
        let c2 = PolicyConfig::desk(Mode::Two, 361);
        assert_eq!(c2.flat_len(), 32 * 8 * 8);
        let p2 = PolicyConfig::full(Mode::Two, 361);
        assert_eq!(p2.flat_len(), 2048);
        assert!(!p2.has_projection());
        let c3 = PolicyConfig::desk(Mode::Three, 10);
        assert_eq!(c3.flat_len(), 32 * 2 * 2 * 2);
    }

    #[test]
    fn init_is_seeded() {
        let cfg = PolicyConfig::desk(Mode::Two, 12);
        let l = Layout::new(&cfg);
        assert_eq!(l.init(&cfg, 3).0, l.init(&cfg, 3).0);
        assert_ne!(l.init(&cfg, 3).0, l.init(&cfg, 4).0);
    }
}
