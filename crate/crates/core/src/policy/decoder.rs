//! Recurrent decoder: embedding of the previous instruction, a gated
//! recurrent cell conditioned on the shape feature, two dense layers and a
//! softmax over the vocabulary.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::encoder::{dropout_mask, hash_mask, EncodedShape};
use super::linalg::{affine, axpy, dot, log_softmax, matvec_t_acc, outer_acc, sigmoid};
use super::PolicyModel;

/// Everything one decoder step needs for backpropagation.
#[derive(Clone, Debug)]
pub(crate) struct StepCache {
    prev: usize,
    e: Vec<f64>,
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    hn: Vec<f64>,
    pub h: Vec<f64>,
    drop1: Option<Vec<f64>>,
    o: Vec<f64>,
    a1: Vec<f64>,
    drop2: Option<Vec<f64>>,
    f: Vec<f64>,
    pub log_probs: Vec<f64>,
}

/// Token choices of one decoded sequence with their caches.
#[derive(Clone, Debug)]
pub struct DecodeTrace {
    pub(crate) steps: Vec<StepCache>,
    /// Token chosen (or teacher target) at each model call.
    pub tokens: Vec<usize>,
    /// `log π(token_t | ·)` at each model call.
    pub log_probs: Vec<f64>,
}

impl DecodeTrace {
    pub(crate) fn hash_pattern<H: std::hash::Hasher>(&self, h: &mut H) {
        for c in &self.steps {
            hash_mask(&c.e, h);
            hash_mask(&c.a1, h);
        }
    }

    pub fn total_log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }

    /// Whether the sequence ended with a sampled stop.
    pub fn stopped(&self, stop: usize) -> bool {
        self.tokens.last() == Some(&stop)
    }
}

fn apply_dropout<R: Rng + ?Sized>(v: &mut [f64], p: f64, rng: Option<&mut R>) -> Option<Vec<f64>> {
    match rng {
        Some(r) if p > 0.0 => {
            let m = dropout_mask(v.len(), p, r);
            v.iter_mut().zip(&m).for_each(|(x, m)| *x *= m);
            Some(m)
        }
        _ => None,
    }
}

impl PolicyModel {
    /// One recurrent step from hidden state `h_prev` after instruction `prev`
    /// (the start id for the first step).
    pub(crate) fn step_forward<R: Rng + ?Sized>(
        &self,
        gi_feat: &[f64],
        h_prev: &[f64],
        prev: usize,
        mut rng: Option<&mut R>,
    ) -> StepCache {
        let cfg = &self.config;
        let l = &self.layout;
        let p = &self.params;
        let (de, dh, v) = (cfg.d_emb, cfg.d_h, cfg.vocab_size);
        let cols = v + 1;

        let mut e = vec![0.0; de];
        for (i, ei) in e.iter_mut().enumerate() {
            *ei = (p[l.emb_w + i * cols + prev] + p[l.emb_b + i]).max(0.0);
        }

        let in_cols = cfg.d_enc + de;
        let mut gi = gi_feat.to_vec();
        for (i, g) in gi.iter_mut().enumerate() {
            let row = l.w_ih + i * in_cols + cfg.d_enc;
            *g += dot(&p[row..row + de], &e) + p[l.b_ih + i];
        }
        let mut gh = vec![0.0; 3 * dh];
        affine(&p[l.w_hh..l.w_hh + 3 * dh * dh], &p[l.b_hh..l.b_hh + 3 * dh], h_prev, &mut gh);

        let mut r = vec![0.0; dh];
        let mut z = vec![0.0; dh];
        let mut n = vec![0.0; dh];
        let mut h = vec![0.0; dh];
        for j in 0..dh {
            r[j] = sigmoid(gi[j] + gh[j]);
            z[j] = sigmoid(gi[dh + j] + gh[dh + j]);
            n[j] = (gi[2 * dh + j] + r[j] * gh[2 * dh + j]).tanh();
            h[j] = (1.0 - z[j]) * n[j] + z[j] * h_prev[j];
        }
        let hn = gh[2 * dh..].to_vec();

        let mut o = h.clone();
        let drop1 = apply_dropout(&mut o, cfg.dropout, rng.as_deref_mut());
        let mut a1 = vec![0.0; dh];
        affine(&p[l.fc1_w..l.fc1_w + dh * dh], &p[l.fc1_b..l.fc1_b + dh], &o, &mut a1);
        let mut f: Vec<f64> = a1.iter().map(|x| x.max(0.0)).collect();
        let drop2 = apply_dropout(&mut f, cfg.dropout, rng);
        let mut logits = vec![0.0; v];
        affine(&p[l.out_w..l.out_w + v * dh], &p[l.out_b..l.out_b + v], &f, &mut logits);
        let log_probs = log_softmax(&logits);

        StepCache { prev, e, h_prev: h_prev.to_vec(), r, z, n, hn, h, drop1, o, a1, drop2, f, log_probs }
    }

    /// Backward through one step. `dlogits` is the loss gradient at the
    /// logits, `dh` the gradient flowing into this step's hidden output.
    /// Returns the gradient for the previous hidden state and adds the gate
    /// input gradient to `dgi_sum`.
    pub(crate) fn step_backward(
        &self,
        c: &StepCache,
        dlogits: &[f64],
        mut dh: Vec<f64>,
        grads: &mut [f64],
        dgi_sum: &mut [f64],
    ) -> Vec<f64> {
        let cfg = &self.config;
        let l = &self.layout;
        let p = &self.params;
        let (de, dhn, v) = (cfg.d_emb, cfg.d_h, cfg.vocab_size);

        outer_acc(dlogits, &c.f, &mut grads[l.out_w..l.out_w + v * dhn]);
        axpy(1.0, dlogits, &mut grads[l.out_b..l.out_b + v]);
        let mut df = vec![0.0; dhn];
        matvec_t_acc(&p[l.out_w..l.out_w + v * dhn], dlogits, &mut df);
        if let Some(m) = &c.drop2 {
            df.iter_mut().zip(m).for_each(|(d, m)| *d *= m);
        }
        df.iter_mut().zip(&c.a1).for_each(|(d, a)| {
            if *a <= 0.0 {
                *d = 0.0
            }
        });
        outer_acc(&df, &c.o, &mut grads[l.fc1_w..l.fc1_w + dhn * dhn]);
        axpy(1.0, &df, &mut grads[l.fc1_b..l.fc1_b + dhn]);
        let mut d_o = vec![0.0; dhn];
        matvec_t_acc(&p[l.fc1_w..l.fc1_w + dhn * dhn], &df, &mut d_o);
        if let Some(m) = &c.drop1 {
            d_o.iter_mut().zip(m).for_each(|(d, m)| *d *= m);
        }
        axpy(1.0, &d_o, &mut dh);

        let mut dgi = vec![0.0; 3 * dhn];
        let mut dgh = vec![0.0; 3 * dhn];
        let mut dh_prev = vec![0.0; dhn];
        for j in 0..dhn {
            let (r, z, n) = (c.r[j], c.z[j], c.n[j]);
            let dn = dh[j] * (1.0 - z);
            let dz = dh[j] * (c.h_prev[j] - n);
            dh_prev[j] = dh[j] * z;
            let dn_pre = dn * (1.0 - n * n);
            let dr = dn_pre * c.hn[j];
            let dz_pre = dz * z * (1.0 - z);
            let dr_pre = dr * r * (1.0 - r);
            dgi[j] = dr_pre;
            dgi[dhn + j] = dz_pre;
            dgi[2 * dhn + j] = dn_pre;
            dgh[j] = dr_pre;
            dgh[dhn + j] = dz_pre;
            dgh[2 * dhn + j] = dn_pre * r;
        }
        outer_acc(&dgh, &c.h_prev, &mut grads[l.w_hh..l.w_hh + 3 * dhn * dhn]);
        axpy(1.0, &dgh, &mut grads[l.b_hh..l.b_hh + 3 * dhn]);
        matvec_t_acc(&p[l.w_hh..l.w_hh + 3 * dhn * dhn], &dgh, &mut dh_prev);

        axpy(1.0, &dgi, &mut grads[l.b_ih..l.b_ih + 3 * dhn]);
        axpy(1.0, &dgi, dgi_sum);
        let in_cols = cfg.d_enc + de;
        let mut de_vec = vec![0.0; de];
        for (i, &g) in dgi.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = l.w_ih + i * in_cols + cfg.d_enc;
            axpy(g, &c.e, &mut grads[row..row + de]);
            axpy(g, &p[row..row + de], &mut de_vec);
        }
        let cols = v + 1;
        for (i, d) in de_vec.iter().enumerate() {
            if c.e[i] > 0.0 {
                grads[l.emb_w + i * cols + c.prev] += d;
                grads[l.emb_b + i] += d;
            }
        }
        dh_prev
    }

    /// Teacher-forced pass over `targets` (a token sequence ending in stop).
    /// Makes at most `max_len` model calls, so the stop of a sequence with
    /// exactly `max_len` instructions is not scored.
    pub fn teacher_forced<R: Rng + ?Sized>(&self, enc: &EncodedShape, targets: &[usize], mut rng: Option<&mut R>) -> DecodeTrace {
        let calls = targets.len().min(self.config.max_len);
        let mut h = vec![0.0; self.config.d_h];
        let mut prev = self.config.start_token();
        let mut trace = DecodeTrace { steps: Vec::with_capacity(calls), tokens: Vec::new(), log_probs: Vec::new() };
        for &t in &targets[..calls] {
            let c = self.step_forward(&enc.gi_feat, &h, prev, rng.as_deref_mut());
            trace.tokens.push(t);
            trace.log_probs.push(c.log_probs[t]);
            h.clone_from(&c.h);
            trace.steps.push(c);
            prev = t;
        }
        trace
    }

    /// Ancestral sampling until stop or `max_len` calls. Dropout is active
    /// when `dropout_rng` is set.
    pub fn sample_trace<A: Rng + ?Sized, D: Rng + ?Sized>(
        &self,
        enc: &EncodedShape,
        actions: &mut A,
        mut dropout_rng: Option<&mut D>,
    ) -> DecodeTrace {
        let stop = self.config.stop_token();
        let mut h = vec![0.0; self.config.d_h];
        let mut prev = self.config.start_token();
        let mut trace = DecodeTrace { steps: Vec::new(), tokens: Vec::new(), log_probs: Vec::new() };
        for _ in 0..self.config.max_len {
            let c = self.step_forward(&enc.gi_feat, &h, prev, dropout_rng.as_deref_mut());
            let probs: Vec<f64> = c.log_probs.iter().map(|l| l.exp()).collect();
            let t = WeightedIndex::new(&probs).expect("softmax output").sample(actions);
            trace.tokens.push(t);
            trace.log_probs.push(c.log_probs[t]);
            h.clone_from(&c.h);
            trace.steps.push(c);
            if t == stop {
                break;
            }
            prev = t;
        }
        trace
    }

    /// Backward for the loss `−Σ_t weights[t] · log π(tokens[t])`.
    /// Parameter gradients go to `grads`, the feature gradient to `dfeat`.
    pub(crate) fn decoder_backward(&self, enc: &EncodedShape, trace: &DecodeTrace, weights: &[f64], grads: &mut [f64], dfeat: &mut [f64]) {
        let cfg = &self.config;
        let dh_n = cfg.d_h;
        let mut dh = vec![0.0; dh_n];
        let mut dgi_sum = vec![0.0; 3 * dh_n];
        for (t, c) in trace.steps.iter().enumerate().rev() {
            let w = weights[t];
            let dlogits: Vec<f64> = c
                .log_probs
                .iter()
                .enumerate()
                .map(|(k, lp)| w * (lp.exp() - if k == trace.tokens[t] { 1.0 } else { 0.0 }))
                .collect();
            dh = self.step_backward(c, &dlogits, dh, grads, &mut dgi_sum);
        }
        let in_cols = cfg.d_enc + cfg.d_emb;
        let l = &self.layout;
        for (i, &g) in dgi_sum.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = l.w_ih + i * in_cols;
            axpy(g, &enc.feat, &mut grads[row..row + cfg.d_enc]);
            axpy(g, &self.params[row..row + cfg.d_enc], dfeat);
        }
    }
}
