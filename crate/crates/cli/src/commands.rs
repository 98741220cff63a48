use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use csgkit::datagen::{generate_dataset, read_programs, DatasetManifest, DatasetSpec, LengthCounts, Thresholds};
use csgkit::detect::{detections_from_beam, evaluate_map, ground_truth, Detection};
use csgkit::exec::{execute, render_primitive};
use csgkit::grid::write_atomic;
use csgkit::metrics::{chamfer, iou3d, RewardConfig, Target};
use csgkit::policy::{
    grad_check, save_checkpoint, teacher_forced_accuracy, token_reward, train_supervised, BaselineState, Checkpoint,
    Example, GradCheckConfig, PolicyConfig, PolicyModel, SgdMomentum, SupervisedConfig,
};
use csgkit::program::{parse_program, GridCheck};
use csgkit::refine::{refine, RefineConfig};
use csgkit::search::{beam_decode, nn_retrieve, SearchConfig, Selection};
use csgkit::vocab::Vocabulary;
use csgkit::{Mode, Program, Shape};

use crate::args::{Cli, Command, Dims, Global, Source};
use crate::UsageError;

/// Prints a line to stdout; a closed pipe is not an error.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

fn need<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| UsageError(format!("missing required flag --{flag}")).into())
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Program text in any integer position inside the canvas.
fn parse_text(text: &str, mode: Mode) -> Result<Program> {
    parse_program(text, mode, usize::MAX, GridCheck::Canvas).with_context(|| format!("parsing {text:?}"))
}

fn read_shape(path: &Path) -> Result<Shape> {
    Shape::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write_shape(path: &Path, shape: &Shape) -> Result<()> {
    write_atomic(path, &shape.to_file_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn dataset_programs(dir: &Path, split: &str, mode: Mode) -> Result<Vec<Program>> {
    let manifest = read_manifest(dir)?;
    if manifest.mode != mode {
        bail!("dataset {} is {}, expected {mode}", dir.display(), manifest.mode);
    }
    let mut out = Vec::new();
    for f in manifest.files.iter().filter(|f| f.split == split) {
        out.extend(read_programs(&dir.join(&f.file), mode)?);
    }
    if out.is_empty() {
        bail!("dataset {} has no {split:?} programs", dir.display());
    }
    Ok(out)
}

fn programs_from(path: &Path, split: &str, mode: Mode) -> Result<Vec<Program>> {
    if path.is_dir() {
        dataset_programs(path, split, mode)
    } else {
        read_programs(path, mode).with_context(|| format!("reading {}", path.display()))
    }
}

fn load_source(src: &Source, mode: Mode) -> Result<Vec<Program>> {
    match (&src.programs, &src.data) {
        (Some(_), Some(_)) => Err(usage("give either --programs or --data, not both")),
        (Some(p), None) => programs_from(p, &src.split, mode),
        (None, Some(d)) => dataset_programs(d, &src.split, mode),
        (None, None) => Err(usage("missing --programs or --data")),
    }
}

/// Target shapes with ids: a single `--in` file or rendered source programs.
fn load_targets(input: &Option<PathBuf>, src: &Source, mode: Mode) -> Result<Vec<(String, Shape)>> {
    if let Some(path) = input {
        if src.programs.is_some() || src.data.is_some() {
            return Err(usage("give either --in or a program source, not both"));
        }
        let shape = read_shape(path)?;
        if shape.mode() != mode {
            bail!("{} holds a {} shape, expected {mode}", path.display(), shape.mode());
        }
        return Ok(vec![(path.display().to_string(), shape)]);
    }
    load_source(src, mode)?
        .iter()
        .enumerate()
        .map(|(i, p)| Ok((i.to_string(), execute(p).with_context(|| format!("rendering program {i}"))?)))
        .collect()
}

/// Loads a checkpoint against the vocabulary of the mode it was trained in.
fn load_model(path: &Path, global: &Global) -> Result<(PolicyModel, Vocabulary)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let (header, _) = Checkpoint::peek(&bytes).with_context(|| format!("reading {}", path.display()))?;
    let mode = header.config.mode;
    if let Some(m) = global.mode {
        if m != mode {
            return Err(usage(format!("--mode {m} given but the checkpoint is {mode}")));
        }
    }
    let vocab = Vocabulary::build(mode);
    let model = PolicyModel::from_checkpoint_bytes(&bytes, &vocab.hash()).with_context(|| format!("loading {}", path.display()))?;
    Ok((model, vocab))
}

/// Reward settings for decoding with `model`; T may not exceed the model's.
fn decode_reward(global: &Global, model: &PolicyModel) -> Result<RewardConfig> {
    let t = global.max_len.unwrap_or(model.config().max_len);
    if t > model.config().max_len {
        return Err(usage(format!("--max-len {t} exceeds the model's limit {}", model.config().max_len)));
    }
    Ok(RewardConfig { gamma: global.gamma.unwrap_or(RewardConfig::default().gamma), max_len: t })
}

#[derive(Default)]
struct Jsonl(String);

impl Jsonl {
    fn push(&mut self, v: &Value) {
        self.0.push_str(&v.to_string());
        self.0.push('\n');
    }

    fn write(&self, path: &Option<PathBuf>) -> Result<()> {
        if let Some(p) = path {
            write_atomic(p, self.0.as_bytes()).with_context(|| format!("writing {}", p.display()))?;
        }
        Ok(())
    }
}

/// Distance (2D Chamfer or 1 − IoU/100) as the mode's report field.
fn metric_field(mode: Mode, d: Option<f64>) -> (&'static str, Value) {
    match mode {
        Mode::Two => ("cd", json!(d)),
        Mode::Three => ("iou", json!(d.map(|d| 100.0 * (1.0 - d)))),
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Exec { program, program_file, out } => {
            let text = match (program, program_file) {
                (Some(t), None) => t,
                (None, Some(f)) => std::fs::read_to_string(&f).with_context(|| format!("reading {}", f.display()))?.trim().to_string(),
                _ => return Err(usage("give exactly one of --program or --program-file")),
            };
            let p = parse_text(&text, g.mode())?;
            let shape = execute(&p)?;
            if let Some(out) = &out {
                write_shape(out, &shape)?;
            }
            let on = match &shape {
                Shape::Flat(s) => s.count(),
                Shape::Voxel(v) => v.count(),
            };
            say!("{}", json!({"mode": g.mode(), "program": p.to_string(), "on_cells": on}));
        }
        Command::RenderPrim { prim, out } => {
            let p = parse_text(&need(prim, "prim")?, g.mode())?;
            let [ins] = p.body() else { return Err(usage("--prim takes a single primitive")) };
            let shape = render_primitive(ins).ok_or_else(|| usage("--prim takes a primitive, not an operation"))?;
            write_shape(&need(out, "out")?, &shape)?;
        }
        Command::Gen { lengths, split_fractions, out } => {
            let lengths = parse_lengths(&need(lengths, "lengths")?, &split_fractions)?;
            let spec = DatasetSpec { mode: g.mode(), lengths, seed: g.seed(), thresholds: Thresholds::for_mode(g.mode()) };
            let out = need(out, "out")?;
            let manifest = generate_dataset(&spec, &out)?;
            say!("{}", serde_json::to_string(&manifest)?);
        }
        Command::Vocab { out } => {
            let vocab = Vocabulary::build(g.mode());
            if let Some(out) = &out {
                write_atomic(out, vocab.listing().as_bytes())?;
            }
            say!("{}", serde_json::to_string_pretty(&vocab.manifest())?);
        }
        Command::TrainSup { source, out, init, dims, epochs, batch_size, lr, no_dropout, target_accuracy, report } => {
            let out = need(out, "out")?;
            let (mut model, vocab) = match &init {
                Some(path) => load_model(path, g)?,
                None => {
                    let vocab = Vocabulary::build(g.mode());
                    let base = match dims {
                        Dims::Desk => PolicyConfig::desk(g.mode(), vocab.len()),
                        Dims::Full => PolicyConfig::full(g.mode(), vocab.len()),
                    };
                    let cfg = PolicyConfig { max_len: g.max_len(), ..base };
                    (PolicyModel::new(cfg, g.seed())?, vocab)
                }
            };
            let data: Vec<Example> = load_source(&source, vocab.mode())?
                .iter()
                .map(|p| Example::from_program(p, &vocab))
                .collect::<csgkit::Result<_>>()?;
            let cfg = SupervisedConfig { epochs, batch_size, lr, seed: g.seed(), dropout: !no_dropout };
            let mut log = Jsonl::default();
            let mut failure = None;
            let t0 = Instant::now();
            train_supervised(&mut model, &data, &cfg, |r, m| {
                let acc = match teacher_forced_accuracy(m, &data) {
                    Ok(a) => a,
                    Err(e) => {
                        failure = Some(anyhow::Error::from(e));
                        return false;
                    }
                };
                let rec = json!({"epoch": r.epoch, "steps": r.steps, "mean_loss": r.mean_loss, "train_accuracy": acc, "seconds": t0.elapsed().as_secs_f64()});
                eprintln!("{rec}");
                log.push(&rec);
                if let Err(e) = save_checkpoint(&out, m, &vocab.hash()) {
                    failure = Some(e.into());
                    return false;
                }
                target_accuracy.is_none_or(|t| acc < t)
            })?;
            if let Some(e) = failure {
                return Err(e);
            }
            log.write(&report)?;
        }
        Command::TrainRl { source, ckpt, out, steps, batch_size, samples, lr, momentum, report } => {
            let (mut model, vocab) = load_model(&need(ckpt, "ckpt")?, g)?;
            let out = need(out, "out")?;
            if batch_size == 0 || samples == 0 {
                return Err(usage("--batch-size and --samples must be positive"));
            }
            let rc = decode_reward(g, &model)?;
            let shapes: Vec<Shape> = load_source(&source, vocab.mode())?.iter().map(execute).collect::<csgkit::Result<_>>()?;
            let targets: Vec<Target> = shapes.iter().map(Target::new).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(g.seed());
            let mut opt = SgdMomentum::new(model.num_params(), lr, momentum);
            let mut baseline = BaselineState::default();
            let mut order: Vec<usize> = (0..shapes.len()).collect();
            let mut pos = order.len();
            let mut log = Jsonl::default();
            let t0 = Instant::now();
            for step in 0..steps {
                let mut batch = Vec::with_capacity(batch_size);
                while batch.len() < batch_size {
                    if pos == order.len() {
                        order.shuffle(&mut rng);
                        pos = 0;
                    }
                    batch.push(order[pos]);
                    pos += 1;
                }
                let bshapes: Vec<Shape> = batch.iter().map(|&i| shapes[i].clone()).collect();
                let r = csgkit::policy::reinforce_step(
                    &mut model,
                    &bshapes,
                    &mut baseline,
                    &mut opt,
                    samples,
                    |i, t| token_reward(&vocab, &targets[batch[i]], t, &rc).r,
                    &mut rng,
                )?;
                let rec = json!({"step": step, "mean_reward": r.mean_reward, "baseline": r.baseline, "grad_norm": r.grad_norm, "seconds": t0.elapsed().as_secs_f64()});
                log.push(&rec);
                if step % 10 == 9 || step + 1 == steps {
                    eprintln!("{rec}");
                }
                if step % 50 == 49 {
                    save_checkpoint(&out, &model, &vocab.hash())?;
                }
            }
            save_checkpoint(&out, &model, &vocab.hash())?;
            log.write(&report)?;
        }
        Command::Infer { ckpt, input, source, report } => {
            let (model, vocab) = load_model(&need(ckpt, "ckpt")?, g)?;
            let k = g.beam.unwrap_or(10);
            if k == 0 {
                return Err(usage("--beam must be at least 1"));
            }
            let cfg = SearchConfig { k, selection: Selection::BestCd, reward: decode_reward(g, &model)? };
            let sweeps = g.refine.unwrap_or(0);
            let single = input.is_some();
            let mode = vocab.mode();
            let mut log = Jsonl::default();
            let mut total = 0.0;
            let targets = load_targets(&input, &source, mode)?;
            for (id, shape) in &targets {
                let t0 = Instant::now();
                let beam = beam_decode(&model, &vocab, shape, &cfg)?;
                let best = beam.best();
                let (program, d) = match (sweeps, best.valid) {
                    (1.., true) => {
                        let r = refine(&best.program, &Target::new(shape), &RefineConfig { max_sweeps: sweeps, ..Default::default() })?;
                        let d = r.objective();
                        (r.program, Some(d))
                    }
                    _ => (best.program.clone(), best.cd),
                };
                total += d.unwrap_or(1.0);
                let (key, value) = metric_field(mode, d);
                let (_, before) = metric_field(mode, best.cd);
                let rec = json!({
                    "id": id,
                    "program": program.to_string(),
                    key: value,
                    "unrefined": before,
                    "valid": best.valid,
                    "log_prob": best.log_prob,
                    "seconds": t0.elapsed().as_secs_f64(),
                });
                if single {
                    say!("{program}");
                    say!("{key}: {}", value);
                }
                log.push(&rec);
            }
            if !single {
                let mean = total / targets.len() as f64;
                let (key, value) = metric_field(mode, Some(mean));
                say!("{}", json!({"shapes": targets.len(), format!("mean_{key}"): value}));
            }
            log.write(&report)?;
        }
        Command::Nn { train, input, source, report } => {
            let mode = g.mode();
            let train = programs_from(&need(train, "train")?, "train", mode)?;
            let train_shapes: Vec<Shape> = train.iter().map(execute).collect::<csgkit::Result<_>>()?;
            let targets = load_targets(&input, &source, mode)?;
            let mut log = Jsonl::default();
            let mut total = 0.0;
            for (id, shape) in &targets {
                let t0 = Instant::now();
                let r = nn_retrieve(shape, &train_shapes)?;
                total += r.distance;
                let (key, value) = metric_field(mode, Some(r.distance));
                let rec = json!({"id": id, "program": train[r.index].to_string(), "index": r.index, key: value, "seconds": t0.elapsed().as_secs_f64()});
                if input.is_some() {
                    say!("{}", train[r.index]);
                    say!("{key}: {value}");
                }
                log.push(&rec);
            }
            if input.is_none() {
                let (key, value) = metric_field(mode, Some(total / targets.len() as f64));
                say!("{}", json!({"shapes": targets.len(), format!("mean_{key}"): value}));
            }
            log.write(&report)?;
        }
        Command::EvalCd { target, shape, program } => {
            let (t, s) = compare_inputs(target, shape, program, Mode::Two)?;
            let (Shape::Flat(a), Shape::Flat(b)) = (&t, &s) else { unreachable!() };
            say!("{}", chamfer(a, b));
        }
        Command::EvalIou { target, shape, program } => {
            let (t, s) = compare_inputs(target, shape, program, Mode::Three)?;
            let (Shape::Voxel(a), Shape::Voxel(b)) = (&t, &s) else { unreachable!() };
            say!("{}", iou3d(a, b));
        }
        Command::Detect { ckpt, source, out } => {
            let (model, vocab) = load_model(&need(ckpt, "ckpt")?, g)?;
            if vocab.mode() != Mode::Two {
                return Err(usage("detection needs a 2d model"));
            }
            let out = need(out, "out")?;
            let cfg = SearchConfig { k: g.beam.unwrap_or(10).max(1), selection: Selection::BestCd, reward: decode_reward(g, &model)? };
            let mut log = Jsonl::default();
            let targets = load_targets(&None, &source, Mode::Two)?;
            for (id, shape) in &targets {
                let beam = beam_decode(&model, &vocab, shape, &cfg)?;
                let dets = detections_from_beam(beam.candidates.iter().map(|c| &c.program));
                log.push(&json!({"id": id, "detections": dets}));
            }
            log.write(&Some(out))?;
            say!("{}", json!({"images": targets.len(), "beam": cfg.k}));
        }
        Command::EvalMap { detections, source, iou } => {
            let truths: Vec<_> = load_source(&source, Mode::Two)?.iter().map(ground_truth).collect();
            let path = need(detections, "detections")?;
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let mut dets: Vec<Vec<Detection>> = vec![Vec::new(); truths.len()];
            for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let rec: Value = serde_json::from_str(line).with_context(|| format!("line {}", n + 1))?;
                let id = match &rec["id"] {
                    Value::String(s) => s.parse::<usize>().ok(),
                    v => v.as_u64().map(|v| v as usize),
                };
                let id = id.filter(|&i| i < truths.len()).with_context(|| format!("line {}: id outside the program list", n + 1))?;
                dets[id] = serde_json::from_value(rec["detections"].clone()).with_context(|| format!("line {}", n + 1))?;
            }
            say!("{}", serde_json::to_string(&evaluate_map(&dets, &truths, iou))?);
        }
        Command::Gradcheck { ckpt, eps, max_per_block, tolerance } => {
            let (model, batch) = match &ckpt {
                Some(p) => {
                    let (model, vocab) = load_model(p, g)?;
                    let texts: &[&str] = match vocab.mode() {
                        Mode::Two => &["c(32,32,16) s(24,40,12) union", "t(40,32,16)"],
                        Mode::Three => &["sp(32,32,32,16) cu(24,24,40,8) subtract"],
                    };
                    let batch = texts
                        .iter()
                        .map(|t| Example::from_program(&Program::parse(t, vocab.mode())?, &vocab))
                        .collect::<csgkit::Result<Vec<_>>>()?;
                    (model, batch)
                }
                None => {
                    // small encoder, d_h = 8, over a 12-token (2D) or 6-token (3D) vocabulary subset
                    let shape = |t: &str| execute(&Program::parse(t, g.mode())?);
                    let (v, widths, batch) = match g.mode() {
                        Mode::Two => (
                            12,
                            vec![2, 2, 2],
                            vec![
                                Example { shape: shape("c(32,32,16) s(24,40,12) union")?, tokens: vec![2, 1, 9, 11] },
                                Example { shape: shape("t(40,32,16)")?, tokens: vec![1, 11] },
                            ],
                        ),
                        Mode::Three => (
                            6,
                            vec![1, 2],
                            vec![Example { shape: shape("sp(32,32,32,16) cu(24,24,40,8) subtract")?, tokens: vec![0, 2, 4, 5] }],
                        ),
                    };
                    let cfg = PolicyConfig { conv_widths: widths, d_enc: 6, d_emb: 4, d_h: 8, ..PolicyConfig::desk(g.mode(), v) };
                    (PolicyModel::new(cfg, g.seed())?, batch)
                }
            };
            let cfg = GradCheckConfig { eps, max_per_block, seed: g.seed(), ..Default::default() };
            let r = grad_check(&model, &batch, &cfg)?;
            say!("{}", serde_json::to_string_pretty(&r)?);
            if r.max_rel_error > tolerance {
                bail!("max relative error {:.3e} exceeds {tolerance:e}", r.max_rel_error);
            }
        }
    }
    Ok(())
}

fn compare_inputs(target: Option<PathBuf>, shape: Option<PathBuf>, program: Option<String>, mode: Mode) -> Result<(Shape, Shape)> {
    let t = read_shape(&need(target, "target")?)?;
    let s = match (shape, program) {
        (Some(p), None) => read_shape(&p)?,
        (None, Some(text)) => execute(&parse_text(&text, mode)?)?,
        _ => return Err(usage("give exactly one of --shape or --program")),
    };
    if t.mode() != mode || s.mode() != mode {
        bail!("expected two {mode} shapes");
    }
    Ok((t, s))
}

/// `3:100,5:80/10/10`: totals split by fractions, or explicit splits.
fn parse_lengths(spec: &str, fractions: &str) -> Result<Vec<LengthCounts>> {
    let fr: Vec<f64> = fractions
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("bad --split-fractions {fractions:?}")))?;
    if fr.len() != 3 || fr.iter().any(|&f| f < 0.0) || fr.iter().sum::<f64>() <= 0.0 {
        return Err(usage("--split-fractions needs three non-negative numbers"));
    }
    let sum: f64 = fr.iter().sum();
    let mut out = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let bad = || usage(format!("bad length spec {item:?}; expected L:N or L:TRAIN/VAL/TEST"));
        let (l, n) = item.split_once(':').ok_or_else(bad)?;
        let length: usize = l.trim().parse().map_err(|_| bad())?;
        let parts: Vec<usize> = n.split('/').map(|s| s.trim().parse()).collect::<Result<_, _>>().map_err(|_| bad())?;
        let (train, val, test) = match parts.as_slice() {
            [total] => {
                let val = (*total as f64 * fr[1] / sum).round() as usize;
                let test = ((*total as f64 * fr[2] / sum).round() as usize).min(total - val);
                (total - val - test, val, test)
            }
            [a, b, c] => (*a, *b, *c),
            _ => return Err(bad()),
        };
        out.push(LengthCounts { length, train, val, test });
    }
    if out.is_empty() {
        return Err(usage("--lengths is empty"));
    }
    Ok(out)
}
