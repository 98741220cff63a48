//! Decoding strategies over a next-token policy, and the nearest-neighbour
//! retrieval baseline.

use std::cmp::Ordering;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CsgError, Result};
use crate::grid::Shape;
use crate::metrics::{shape_reward, RewardConfig, Target};
use crate::policy::{PolicyModel, StepPolicy};
use crate::program::Program;
use crate::vocab::Vocabulary;

/// A decoded token sequence, always ending in the stop token.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |b, (i, &x)| if x > v[b] { i } else { b })
}

fn call_budget<P: StepPolicy>(policy: &P, max_len: usize) -> usize {
    max_len.min(policy.max_len())
}

/// Most likely token at each step (lowest index on ties) until stop; a stop
/// is appended after `max_len` calls.
pub fn greedy_tokens<P: StepPolicy>(policy: &P, max_len: usize) -> Hypothesis {
    let stop = policy.stop_token();
    let mut state = policy.start();
    let mut prev = None;
    let mut h = Hypothesis { tokens: Vec::new(), log_prob: 0.0 };
    for _ in 0..call_budget(policy, max_len) {
        let (lp, next) = policy.next(&state, prev);
        let t = argmax(&lp);
        h.tokens.push(t);
        h.log_prob += lp[t];
        if t == stop {
            return h;
        }
        state = next;
        prev = Some(t);
    }
    h.tokens.push(stop);
    h
}

struct Beam<S> {
    tokens: Vec<usize>,
    log_prob: f64,
    state: Option<S>,
}

/// Length-synchronous beam search over summed log-probabilities. Finished
/// hypotheses are kept frozen and compete on total log-probability. Returns
/// up to `k` hypotheses in non-increasing log-probability order.
pub fn beam_tokens<P: StepPolicy>(policy: &P, k: usize, max_len: usize) -> Vec<Hypothesis> {
    let k = k.max(1);
    let stop = policy.stop_token();
    let mut beams = vec![Beam { tokens: Vec::new(), log_prob: 0.0, state: Some(policy.start()) }];
    for _ in 0..call_budget(policy, max_len) {
        if beams.iter().all(|b| b.state.is_none()) {
            break;
        }
        // (score, parent rank, token or None for a frozen beam)
        let mut pool: Vec<(f64, usize, Option<usize>)> = Vec::new();
        let mut dists = Vec::with_capacity(beams.len());
        for (rank, b) in beams.iter().enumerate() {
            match &b.state {
                None => {
                    pool.push((b.log_prob, rank, None));
                    dists.push(None);
                }
                Some(s) => {
                    let (lp, next) = policy.next(s, b.tokens.last().copied());
                    for (t, &l) in lp.iter().enumerate() {
                        pool.push((b.log_prob + l, rank, Some(t)));
                    }
                    dists.push(Some(next));
                }
            }
        }
        pool.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        pool.truncate(k);
        beams = pool
            .into_iter()
            .map(|(score, rank, tok)| {
                let parent = &beams[rank];
                match tok {
                    None => Beam { tokens: parent.tokens.clone(), log_prob: score, state: None },
                    Some(t) => {
                        let mut tokens = parent.tokens.clone();
                        tokens.push(t);
                        let state = if t == stop { None } else { dists[rank].clone() };
                        Beam { tokens, log_prob: score, state }
                    }
                }
            })
            .collect();
    }
    beams
        .into_iter()
        .map(|mut b| {
            if b.tokens.last() != Some(&stop) {
                b.tokens.push(stop);
            }
            Hypothesis { tokens: b.tokens, log_prob: b.log_prob }
        })
        .collect()
}

/// `n` independent ancestral samples.
pub fn sample_tokens<P: StepPolicy, R: Rng + ?Sized>(policy: &P, n: usize, max_len: usize, rng: &mut R) -> Vec<Hypothesis> {
    let stop = policy.stop_token();
    (0..n)
        .map(|_| {
            let mut state = policy.start();
            let mut prev = None;
            let mut h = Hypothesis { tokens: Vec::new(), log_prob: 0.0 };
            for _ in 0..call_budget(policy, max_len) {
                let (lp, next) = policy.next(&state, prev);
                let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
                let t = WeightedIndex::new(&probs).expect("distribution").sample(rng);
                h.tokens.push(t);
                h.log_prob += lp[t];
                if t == stop {
                    return h;
                }
                state = next;
                prev = Some(t);
            }
            h.tokens.push(stop);
            h
        })
        .collect()
}

/// Log-probability of a token sequence under `policy`, scoring at most
/// `max_len` calls.
pub fn rescore<P: StepPolicy>(policy: &P, tokens: &[usize], max_len: usize) -> f64 {
    let mut state = policy.start();
    let mut prev = None;
    let mut total = 0.0;
    for &t in tokens.iter().take(call_budget(policy, max_len)) {
        let (lp, next) = policy.next(&state, prev);
        total += lp[t];
        state = next;
        prev = Some(t);
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Selection {
    BestCd,
    BestLogProb,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Beam width.
    pub k: usize,
    pub selection: Selection,
    /// Length limit T and reward shaping.
    pub reward: RewardConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { k: 10, selection: Selection::BestCd, reward: RewardConfig::default() }
    }
}

/// A decoded program scored against its target.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub program: Program,
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub valid: bool,
    pub rendered: Option<Shape>,
    /// Chamfer distance (2D) or `1 − IoU/100` (3D); set iff valid.
    pub cd: Option<f64>,
    pub reward: f64,
}

impl Candidate {
    pub fn from_hypothesis(h: &Hypothesis, vocab: &Vocabulary, target: &Target, cfg: &RewardConfig) -> Result<Self> {
        let program = vocab.decode(&h.tokens, cfg.max_len)?;
        let (rendered, cd) = match target.evaluate(&program, cfg.max_len) {
            Some((s, d)) => (Some(s), Some(d)),
            None => (None, None),
        };
        Ok(Self {
            valid: cd.is_some(),
            reward: cd.map_or(0.0, |d| shape_reward(d, cfg.gamma)),
            program,
            tokens: h.tokens.clone(),
            log_prob: h.log_prob,
            rendered,
            cd,
        })
    }
}

/// Index of the selected candidate: the lowest distance among valid ones
/// (first on ties) under [`Selection::BestCd`], else the first.
pub fn select(candidates: &[Candidate], selection: Selection) -> usize {
    if selection == Selection::BestLogProb {
        return 0;
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        if let Some(d) = c.cd {
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((i, d));
            }
        }
    }
    best.map_or(0, |(i, _)| i)
}

#[derive(Clone, Debug)]
pub struct BeamResult {
    /// Sorted by non-increasing log-probability.
    pub candidates: Vec<Candidate>,
    pub selected: usize,
}

impl BeamResult {
    pub fn best(&self) -> &Candidate {
        &self.candidates[self.selected]
    }
}

fn scored(model: &PolicyModel, vocab: &Vocabulary, shape: &Shape) -> Result<(crate::policy::FeatureVector, Target)> {
    if vocab.len() != model.config().vocab_size || vocab.mode() != model.config().mode {
        return Err(CsgError::InvalidConfig(format!(
            "model expects a {} vocabulary of {} entries",
            model.config().mode,
            model.config().vocab_size
        )));
    }
    Ok((model.encode(shape)?, Target::new(shape)))
}

pub fn greedy_decode(model: &PolicyModel, vocab: &Vocabulary, shape: &Shape, cfg: &RewardConfig) -> Result<Candidate> {
    let (feat, target) = scored(model, vocab, shape)?;
    let h = greedy_tokens(&model.condition(&feat), cfg.max_len);
    Candidate::from_hypothesis(&h, vocab, &target, cfg)
}

pub fn beam_decode(model: &PolicyModel, vocab: &Vocabulary, shape: &Shape, cfg: &SearchConfig) -> Result<BeamResult> {
    let (feat, target) = scored(model, vocab, shape)?;
    let hyps = beam_tokens(&model.condition(&feat), cfg.k, cfg.reward.max_len);
    let candidates = hyps
        .iter()
        .map(|h| Candidate::from_hypothesis(h, vocab, &target, &cfg.reward))
        .collect::<Result<Vec<_>>>()?;
    let selected = select(&candidates, cfg.selection);
    Ok(BeamResult { candidates, selected })
}

pub fn sample_decode<R: Rng + ?Sized>(
    model: &PolicyModel,
    vocab: &Vocabulary,
    shape: &Shape,
    n: usize,
    cfg: &RewardConfig,
    rng: &mut R,
) -> Result<Vec<Candidate>> {
    let (feat, target) = scored(model, vocab, shape)?;
    sample_tokens(&model.condition(&feat), n, cfg.max_len, rng)
        .iter()
        .map(|h| Candidate::from_hypothesis(h, vocab, &target, cfg))
        .collect()
}

/// Retrieved training entry and its distance to the query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Retrieval {
    pub index: usize,
    pub distance: f64,
}

/// Training entry whose shape is closest to `target` under the mode's
/// distance (Chamfer in 2D); the earliest one on ties.
pub fn nn_retrieve<'a>(target: &Shape, trainset: impl IntoIterator<Item = &'a Shape>) -> Result<Retrieval> {
    let t = Target::new(target);
    let mut best: Option<Retrieval> = None;
    for (index, s) in trainset.into_iter().enumerate() {
        let distance = t.distance(s);
        if best.is_none_or(|b| distance < b.distance) {
            best = Some(Retrieval { index, distance });
        }
    }
    best.ok_or(CsgError::EmptyTrainset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::execute;
    use crate::metrics::chamfer;
    use crate::program::Mode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Fixed conditional table: the next distribution depends only on the
    /// previous token.
    struct Table {
        rows: Vec<Vec<f64>>,
        max_len: usize,
    }

    impl StepPolicy for Table {
        type State = ();

        fn vocab_size(&self) -> usize {
            self.rows[0].len()
        }

        fn max_len(&self) -> usize {
            self.max_len
        }

        fn start(&self) {}

        fn next(&self, _: &(), prev: Option<usize>) -> (Vec<f64>, ()) {
            let row = prev.map_or(0, |p| p + 1);
            (self.rows[row].iter().map(|p| p.ln()).collect(), ())
        }
    }

    fn toy() -> Table {
        // tokens a=0, b=1, stop=2
        Table {
            rows: vec![
                vec![0.5, 0.3, 0.2],
                vec![0.1, 0.5, 0.4],
                vec![0.6, 0.05, 0.35],
            ],
            max_len: 3,
        }
    }

    /// Every stop-terminated sequence of at most `max_len` calls with its
    /// probability.
    fn enumerate(t: &Table) -> Vec<(Vec<usize>, f64)> {
        let mut out = Vec::new();
        let mut frontier = vec![(Vec::new(), 0.0)];
        for depth in 0..t.max_len {
            let mut next = Vec::new();
            for (seq, lp) in frontier {
                let (dist, _) = t.next(&(), seq.last().copied());
                for (tok, l) in dist.iter().enumerate() {
                    let mut s: Vec<usize> = seq.clone();
                    s.push(tok);
                    if tok == 2 {
                        out.push((s, lp + l));
                    } else if depth + 1 == t.max_len {
                        s.push(2);
                        out.push((s, lp + l));
                    } else {
                        next.push((s, lp + l));
                    }
                }
            }
            frontier = next;
        }
        out
    }

    #[test]
    fn enumeration_is_a_distribution() {
        let total: f64 = enumerate(&toy()).iter().map(|(_, lp)| lp.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn greedy_follows_argmax() {
        let h = greedy_tokens(&toy(), 3);
        assert_eq!(h.tokens, vec![0, 1, 0, 2]);
        assert!((h.log_prob - (0.5f64 * 0.5 * 0.6).ln()).abs() < 1e-12);
    }

    #[test]
    fn beam_of_one_is_greedy() {
        let t = toy();
        assert_eq!(beam_tokens(&t, 1, 3), vec![greedy_tokens(&t, 3)]);
    }

    #[test]
    fn beam_of_two_on_enumerable_toy() {
        // the top two sequences under exhaustive enumeration
        let t = Table {
            rows: vec![vec![0.5, 0.3, 0.2], vec![0.1, 0.3, 0.6], vec![0.2, 0.1, 0.7]],
            max_len: 3,
        };
        let mut all = enumerate(&t);
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let beam = beam_tokens(&t, 2, 3);
        assert_eq!(beam.len(), 2);
        for (h, (seq, lp)) in beam.iter().zip(&all) {
            assert_eq!(&h.tokens, seq);
            assert!((h.log_prob - lp).abs() < 1e-12);
        }
    }

    #[test]
    fn beam_is_sorted_and_rescorable() {
        let t = toy();
        let beam = beam_tokens(&t, 5, 3);
        assert!(beam.windows(2).all(|w| w[0].log_prob >= w[1].log_prob));
        for h in &beam {
            assert!((rescore(&t, &h.tokens, 3) - h.log_prob).abs() < 1e-12);
            assert_eq!(h.tokens.last(), Some(&2));
            assert!(h.tokens.len() <= 4);
        }
    }

    #[test]
    fn uniform_policy_repeats_token_zero() {
        let t = Table { rows: vec![vec![0.25; 4]; 5], max_len: 4 };
        assert_eq!(greedy_tokens(&t, 4).tokens, vec![0, 0, 0, 0, 3]);
    }

    #[test]
    fn sampling_is_seeded_and_matches_first_step_frequencies() {
        let t = toy();
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(sample_tokens(&t, 20, 3, &mut a), sample_tokens(&t, 20, 3, &mut b));
        assert!(sample_tokens(&t, 0, 3, &mut a).is_empty());
        let n = 10_000;
        let samples = sample_tokens(&t, n, 3, &mut a);
        for (tok, &p) in t.rows[0].iter().enumerate() {
            let count = samples.iter().filter(|h| h.tokens[0] == tok).count() as f64;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((count - n as f64 * p).abs() < 3.0 * sigma, "token {tok}: {count}");
        }
    }

    fn shape(text: &str) -> Shape {
        execute(&Program::parse(text, Mode::Two).unwrap()).unwrap()
    }

    #[test]
    fn retrieval_matches_linear_scan() {
        let texts = [
            "c(32,32,16)",
            "s(32,32,16)",
            "t(32,32,16)",
            "c(24,24,8)",
            "s(40,40,12)",
            "c(32,32,16) s(40,40,12) union",
            "c(32,32,20)",
            "t(24,40,12)",
            "s(16,16,8)",
            "c(40,24,12)",
        ];
        let train: Vec<Shape> = texts.iter().map(|t| shape(t)).collect();
        let q = shape("c(32,32,12)");
        let r = nn_retrieve(&q, &train).unwrap();
        let grid = |s: &Shape| match s {
            Shape::Flat(g) => *g,
            _ => unreachable!(),
        };
        let dists: Vec<f64> = train.iter().map(|s| chamfer(&grid(&q), &grid(s))).collect();
        let oracle = dists.iter().enumerate().fold(0, |b, (i, &d)| if d < dists[b] { i } else { b });
        assert_eq!(r.index, oracle);
        assert_eq!(r.distance, dists[oracle]);

        let hit = nn_retrieve(&train[4], &train).unwrap();
        assert_eq!((hit.index, hit.distance), (4, 0.0));
        assert_eq!(nn_retrieve(&q, &train[7..8]).unwrap().index, 0);
        assert!(matches!(nn_retrieve(&q, &[]), Err(CsgError::EmptyTrainset)));
    }

    #[test]
    fn selection_prefers_lowest_distance() {
        let v = Vocabulary::build(Mode::Two);
        let target = Target::new(&shape("c(32,32,16)"));
        let cfg = RewardConfig::default();
        let mk = |text: &str, lp: f64| {
            let p = Program::parse(text, Mode::Two).unwrap().with_stop();
            let h = Hypothesis { tokens: v.encode(&p).unwrap(), log_prob: lp };
            Candidate::from_hypothesis(&h, &v, &target, &cfg).unwrap()
        };
        let cands = vec![mk("c(32,32,8)", -1.0), mk("c(32,32,16) union", -2.0), mk("c(32,32,16)", -3.0)];
        assert!(!cands[1].valid && cands[1].cd.is_none() && cands[1].reward == 0.0);
        assert_eq!(select(&cands, Selection::BestCd), 2);
        assert_eq!(cands[2].reward, 1.0);
        assert_eq!(select(&cands, Selection::BestLogProb), 0);
        let invalid = vec![mk("c(32,32,16) union", -1.0), mk("union", -2.0)];
        assert_eq!(select(&invalid, Selection::BestCd), 0);
    }
}
