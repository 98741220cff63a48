//! Synthetic program generation with rejection sampling, and dataset files.
//!
//! A program of length `2k − 1` is a random binary expression tree over `k`
//! primitives. Candidates are rejected when some operation barely changes
//! its operands or when the final shape is too small.

use std::collections::HashSet;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CsgError, Result};
use crate::exec::Canvas;
use crate::geometry::{rasterize2d, voxelize3d};
use crate::grid::{write_atomic, Grid2D, VoxelGrid};
use crate::program::{BoolOp, Instruction, Mode, Program, DEFAULT_MAX_LEN};
use crate::vocab::Vocabulary;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Every operation must change the ON count by at least this fraction of
    /// the summed ON counts of its operands.
    pub min_change_frac: f64,
    /// Minimum ON cells in the final shape.
    pub min_on: usize,
    /// Proposal weights for (union, intersect, subtract).
    pub op_weights: [f64; 3],
    pub max_attempts: usize,
}

impl Thresholds {
    pub fn for_mode(mode: Mode) -> Self {
        Self {
            min_change_frac: 0.1,
            min_on: match mode {
                Mode::Two => 64,
                Mode::Three => 512,
            },
            op_weights: [0.09, 0.53, 0.38],
            max_attempts: 10_000,
        }
    }
}

/// How much an operation changed its operands: the smaller of the two
/// absolute ON-count differences between the result and each operand.
pub fn on_change(left: usize, right: usize, result: usize) -> usize {
    result.abs_diff(left).min(result.abs_diff(right))
}

/// Does the operation pass the change rule?
pub fn passes_change_rule(left: usize, right: usize, result: usize, frac: f64) -> bool {
    on_change(left, right, result) as f64 >= frac * (left + right) as f64
}

/// Primitive tokens of the vocabulary grouped by primitive kind.
struct KindPools {
    pools: Vec<Vec<usize>>,
}

impl KindPools {
    fn new(vocab: &Vocabulary) -> Self {
        let mut pools: Vec<Vec<usize>> = vec![Vec::new(); 3];
        for (t, e) in vocab.entries()[..vocab.primitive_count()].iter().enumerate() {
            let k = match e {
                Instruction::Prim2D(p) => p.kind as usize,
                Instruction::Prim3D(p) => p.kind as usize,
                _ => unreachable!(),
            };
            pools[k].push(t);
        }
        Self { pools }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let pool = &self.pools[rng.gen_range(0..self.pools.len())];
        pool[rng.gen_range(0..pool.len())]
    }
}

enum Node {
    Leaf(usize),
    Op(BoolOp, Box<Node>, Box<Node>),
}

fn postfix(node: &Node, vocab: &Vocabulary, out: &mut Vec<Instruction>) {
    match node {
        Node::Leaf(t) => out.push(*vocab.get(*t).expect("pool token")),
        Node::Op(op, l, r) => {
            postfix(l, vocab, out);
            postfix(r, vocab, out);
            out.push(Instruction::Op(*op));
        }
    }
}

/// Redraws of one operation before the whole tree is abandoned.
const LOCAL_RETRIES: usize = 16;

/// Grows a random expression tree with `leaves` primitives bottom-up. An
/// operation that fails the change rule is redrawn together with its right
/// subtree, keeping the accepted left subtree, at most `LOCAL_RETRIES`
/// times. Every failed check counts against `budget`.
fn grow<C: Canvas>(
    leaves: usize,
    rng: &mut impl Rng,
    pools: &KindPools,
    ops: &WeightedIndex<f64>,
    draw: &impl Fn(usize) -> C,
    frac: f64,
    budget: &mut usize,
) -> Option<(Node, C)> {
    if leaves == 1 {
        let t = pools.sample(rng);
        return Some((Node::Leaf(t), draw(t)));
    }
    let split = rng.gen_range(1..leaves);
    let (left, a) = grow(split, rng, pools, ops, draw, frac, budget)?;
    for _ in 0..LOCAL_RETRIES {
        let op = BoolOp::ALL[ops.sample(rng)];
        let (right, b) = grow(leaves - split, rng, pools, ops, draw, frac, budget)?;
        let out = a.combine(op, &b);
        if passes_change_rule(a.on_count(), b.on_count(), out.on_count(), frac) {
            return Some((Node::Op(op, Box::new(left), Box::new(right)), out));
        }
        *budget = budget.checked_sub(1)?;
    }
    None
}

/// Renders a finished tree, checking the change rule at every operation.
#[cfg(test)]
fn render_checked<C: Canvas>(node: &Node, draw: &impl Fn(usize) -> C, frac: f64) -> Option<C> {
    match node {
        Node::Leaf(t) => Some(draw(*t)),
        Node::Op(op, l, r) => {
            let a = render_checked(l, draw, frac)?;
            let b = render_checked(r, draw, frac)?;
            let out = a.combine(*op, &b);
            passes_change_rule(a.on_count(), b.on_count(), out.on_count(), frac).then_some(out)
        }
    }
}

/// Rejection sampler over one vocabulary. 2D primitive rasters are cached.
pub struct ProgramSampler<'a> {
    vocab: &'a Vocabulary,
    thresholds: Thresholds,
    pools: KindPools,
    ops: WeightedIndex<f64>,
    rasters: Vec<Grid2D>,
}

impl<'a> ProgramSampler<'a> {
    pub fn new(vocab: &'a Vocabulary, thresholds: &Thresholds) -> Result<Self> {
        let ops = WeightedIndex::new(thresholds.op_weights).map_err(|e| CsgError::Format {
            what: "operation weights",
            message: e.to_string(),
        })?;
        let rasters = match vocab.mode() {
            Mode::Two => vocab.entries()[..vocab.primitive_count()]
                .iter()
                .map(|e| match e {
                    Instruction::Prim2D(p) => rasterize2d(p),
                    _ => unreachable!(),
                })
                .collect(),
            Mode::Three => Vec::new(),
        };
        Ok(Self { vocab, thresholds: thresholds.clone(), pools: KindPools::new(vocab), ops, rasters })
    }

    fn draw2d(&self, tok: usize) -> Grid2D {
        self.rasters[tok]
    }

    fn draw3d(&self, tok: usize) -> VoxelGrid {
        match self.vocab.get(tok) {
            Some(Instruction::Prim3D(p)) => voxelize3d(p),
            _ => unreachable!("3D pools hold 3D primitives"),
        }
    }

    #[cfg(test)]
    fn accept(&self, node: &Node) -> bool {
        let t = &self.thresholds;
        let count = match self.vocab.mode() {
            Mode::Two => render_checked(node, &|k| self.draw2d(k), t.min_change_frac).map(|g| g.count()),
            Mode::Three => render_checked(node, &|k| self.draw3d(k), t.min_change_frac).map(|g| g.count()),
        };
        count.is_some_and(|n| n >= t.min_on)
    }

    fn try_grow(&self, leaves: usize, rng: &mut impl Rng, budget: &mut usize) -> Option<Node> {
        let (t, pools, ops) = (&self.thresholds, &self.pools, &self.ops);
        let grown = match self.vocab.mode() {
            Mode::Two => grow(leaves, rng, pools, ops, &|k| self.draw2d(k), t.min_change_frac, budget)
                .map(|(n, g)| (n, g.count())),
            Mode::Three => grow(leaves, rng, pools, ops, &|k| self.draw3d(k), t.min_change_frac, budget)
                .map(|(n, g)| (n, g.count())),
        };
        match grown {
            Some((node, count)) if count >= t.min_on => Some(node),
            Some(_) => {
                *budget = budget.saturating_sub(1);
                None
            }
            None => None,
        }
    }

    /// Draws one program of exactly `length` instructions satisfying the
    /// rejection rules. Primitive kinds are drawn uniformly, then a placement
    /// uniformly within the kind.
    pub fn sample(&self, length: usize, rng: &mut impl Rng) -> Result<Program> {
        if length.is_multiple_of(2) {
            return Err(CsgError::Format { what: "program length", message: format!("{length} is not odd") });
        }
        let leaves = length.div_ceil(2);
        let mut budget = self.thresholds.max_attempts;
        while budget > 0 {
            if let Some(tree) = self.try_grow(leaves, rng, &mut budget) {
                let mut ins = Vec::with_capacity(length);
                postfix(&tree, self.vocab, &mut ins);
                return Program::new(self.vocab.mode(), ins, length.max(DEFAULT_MAX_LEN));
            }
        }
        Err(CsgError::GenerationTimeout { attempts: self.thresholds.max_attempts })
    }
}

/// One-off convenience around [`ProgramSampler`].
pub fn sample_program(length: usize, vocab: &Vocabulary, rng: &mut impl Rng, t: &Thresholds) -> Result<Program> {
    ProgramSampler::new(vocab, t)?.sample(length, rng)
}

/// Number of programs per split for one program length.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthCounts {
    pub length: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl LengthCounts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub mode: Mode,
    pub lengths: Vec<LengthCounts>,
    pub seed: u64,
    pub thresholds: Thresholds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub length: usize,
    pub split: String,
    pub count: usize,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub mode: Mode,
    pub seed: u64,
    pub vocab_size: usize,
    pub vocab_sha256: String,
    pub thresholds: Thresholds,
    pub files: Vec<DatasetFile>,
}

/// Unique programs for one length, in generation order.
pub fn unique_programs(length: usize, count: usize, vocab: &Vocabulary, seed: u64, t: &Thresholds) -> Result<Vec<Program>> {
    let sampler = ProgramSampler::new(vocab, t)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(length as u64);
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    let mut duplicates = 0usize;
    // Deep trees occasionally exhaust the per-program budget; tolerate a few.
    let mut timeouts = 0usize;
    while out.len() < count {
        let p = match sampler.sample(length, &mut rng) {
            Ok(p) => p,
            Err(CsgError::GenerationTimeout { attempts }) => {
                timeouts += 1;
                if timeouts > 10 + count / 100 {
                    return Err(CsgError::GenerationTimeout { attempts });
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        if seen.insert(p.to_string()) {
            out.push(p);
        } else {
            duplicates += 1;
            if duplicates > t.max_attempts {
                return Err(CsgError::GenerationTimeout { attempts: duplicates });
            }
        }
    }
    Ok(out)
}

fn split_file_name(length: usize, split: &str) -> String {
    format!("len{length:02}_{split}.txt")
}

/// Writes one program file per (length, split) plus `manifest.json` into
/// `dir`. Programs are deduplicated per length by canonical text, so the
/// splits are disjoint.
pub fn generate_dataset(spec: &DatasetSpec, dir: &Path) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir)?;
    let vocab = Vocabulary::build(spec.mode);
    let mut files = Vec::new();
    let mut lengths = spec.lengths.clone();
    lengths.sort_by_key(|l| l.length);
    for lc in &lengths {
        let programs = unique_programs(lc.length, lc.total(), &vocab, spec.seed, &spec.thresholds)?;
        let mut rest = programs.as_slice();
        for (split, n) in [("train", lc.train), ("val", lc.val), ("test", lc.test)] {
            let (chunk, tail) = rest.split_at(n);
            rest = tail;
            if n == 0 {
                continue;
            }
            let name = split_file_name(lc.length, split);
            let mut text = String::new();
            for p in chunk {
                text.push_str(&p.to_string());
                text.push('\n');
            }
            write_atomic(dir.join(&name), text.as_bytes())?;
            files.push(DatasetFile { length: lc.length, split: split.to_string(), count: n, file: name });
        }
    }
    let manifest = DatasetManifest {
        mode: spec.mode,
        seed: spec.seed,
        vocab_size: vocab.len(),
        vocab_sha256: vocab.hash(),
        thresholds: spec.thresholds.clone(),
        files,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    write_atomic(dir.join("manifest.json"), json.as_bytes())?;
    Ok(manifest)
}

/// Reads one program per non-empty line; `#` starts a comment line.
pub fn read_programs(path: &Path, mode: Mode) -> Result<Vec<Program>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| crate::program::parse_program(l, mode, usize::MAX, crate::program::GridCheck::Canvas))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::execute2d;
    use crate::program::validate;

    #[test]
    fn change_rule() {
        // A ∪ A = A
        assert!(!passes_change_rule(100, 100, 100, 0.1));
        // disjoint union of equal parts
        assert!(passes_change_rule(100, 100, 200, 0.1));
        // subtracting a sliver
        assert!(!passes_change_rule(100, 50, 95, 0.1));
    }

    #[test]
    fn identical_union_is_rejected() {
        let vocab = Vocabulary::build(Mode::Two);
        let sampler = ProgramSampler::new(&vocab, &Thresholds::for_mode(Mode::Two)).unwrap();
        let c = vocab.token_of(&Instruction::circle(32, 32, 16)).unwrap();
        let node = Node::Op(BoolOp::Union, Box::new(Node::Leaf(c)), Box::new(Node::Leaf(c)));
        assert!(!sampler.accept(&node));
        let d = vocab.token_of(&Instruction::circle(16, 16, 8)).unwrap();
        let node = Node::Op(BoolOp::Union, Box::new(Node::Leaf(c)), Box::new(Node::Leaf(d)));
        assert!(sampler.accept(&node));
    }

    #[test]
    fn length_three_has_postfix_shape() {
        let vocab = Vocabulary::build(Mode::Two);
        let t = Thresholds::for_mode(Mode::Two);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p = sample_program(3, &vocab, &mut rng, &t).unwrap();
            let ins = p.instructions();
            assert_eq!(ins.len(), 3);
            assert!(ins[0].is_primitive() && ins[1].is_primitive());
            assert!(matches!(ins[2], Instruction::Op(_)));
            assert!(execute2d(&p).unwrap().count() >= t.min_on);
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let vocab = Vocabulary::build(Mode::Two);
        let t = Thresholds::for_mode(Mode::Two);
        let a = unique_programs(7, 20, &vocab, 99, &t).unwrap();
        let b = unique_programs(7, 20, &vocab, 99, &t).unwrap();
        assert_eq!(a, b);
        let c = unique_programs(7, 20, &vocab, 100, &t).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn three_d_programs_are_valid() {
        let vocab = Vocabulary::build(Mode::Three);
        let t = Thresholds::for_mode(Mode::Three);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for len in [1, 3, 5] {
            let p = sample_program(len, &vocab, &mut rng, &t).unwrap();
            assert_eq!(p.len(), len);
            assert!(validate(&p).valid);
            assert!(crate::exec::execute3d(&p).unwrap().count() >= t.min_on);
        }
    }

    #[test]
    fn impossible_thresholds_time_out() {
        let vocab = Vocabulary::build(Mode::Two);
        let t = Thresholds { min_on: 5000, max_attempts: 20, ..Thresholds::for_mode(Mode::Two) };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_program(3, &vocab, &mut rng, &t),
            Err(CsgError::GenerationTimeout { attempts: 20 })
        ));
        assert!(sample_program(4, &vocab, &mut rng, &t).is_err());
    }

    #[test]
    fn dataset_files_are_unique_disjoint_and_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec {
            mode: Mode::Two,
            lengths: vec![
                LengthCounts { length: 5, train: 80, val: 10, test: 10 },
                LengthCounts { length: 3, train: 20, val: 5, test: 5 },
            ],
            seed: 7,
            thresholds: Thresholds::for_mode(Mode::Two),
        };
        let m = generate_dataset(&spec, dir.path()).unwrap();
        assert_eq!(m.files.len(), 6);
        let mut all = HashSet::new();
        let mut n5 = 0;
        for f in &m.files {
            let progs = read_programs(&dir.path().join(&f.file), Mode::Two).unwrap();
            assert_eq!(progs.len(), f.count);
            for p in progs {
                assert!(all.insert(p.to_string()));
                if f.length == 5 {
                    n5 += 1;
                }
            }
        }
        assert_eq!(n5, 100);
        let again = tempfile::tempdir().unwrap();
        generate_dataset(&spec, again.path()).unwrap();
        for f in m.files.iter().map(|f| f.file.clone()).chain(["manifest.json".to_string()]) {
            assert_eq!(
                std::fs::read(dir.path().join(&f)).unwrap(),
                std::fs::read(again.path().join(&f)).unwrap()
            );
        }
    }
}
