use csgkit::datagen::{generate_dataset, read_programs, DatasetSpec, LengthCounts, Thresholds};
use csgkit::detect::{detections_from_beam, evaluate_map, ground_truth, Detection};
use csgkit::exec::execute;
use csgkit::metrics::{chamfer, Target};
use csgkit::policy::{load_checkpoint, save_checkpoint, train_supervised, Example, PolicyConfig, PolicyModel, SupervisedConfig};
use csgkit::refine::{refine, RefineConfig};
use csgkit::search::{beam_decode, greedy_decode, nn_retrieve, SearchConfig};
use csgkit::vocab::Vocabulary;
use csgkit::{Mode, Shape};

fn dataset(mode: Mode, dir: &std::path::Path) -> (Vec<csgkit::Program>, Vec<csgkit::Program>) {
    let spec = DatasetSpec {
        mode,
        lengths: vec![LengthCounts { length: 3, train: 16, val: 2, test: 4 }],
        seed: 8,
        thresholds: Thresholds::for_mode(mode),
    };
    let m = generate_dataset(&spec, dir).unwrap();
    let read = |split: &str| {
        let f = m.files.iter().find(|f| f.split == split).unwrap();
        read_programs(&dir.join(&f.file), mode).unwrap()
    };
    (read("train"), read("test"))
}

#[test]
fn flat_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = dataset(Mode::Two, &dir.path().join("data"));
    assert_eq!((train.len(), test.len()), (16, 4));

    let vocab = Vocabulary::build(Mode::Two);
    let mut model = PolicyModel::new(PolicyConfig::desk(Mode::Two, vocab.len()), 3).unwrap();
    let data: Vec<Example> = train.iter().map(|p| Example::from_program(p, &vocab).unwrap()).collect();
    let mut losses = Vec::new();
    let cfg = SupervisedConfig { epochs: 4, batch_size: 4, lr: 1e-3, seed: 0, dropout: false };
    train_supervised(&mut model, &data, &cfg, |r, _| {
        losses.push(r.mean_loss);
        true
    })
    .unwrap();
    assert_eq!(losses.len(), 4);
    assert!(losses[3] < losses[0], "{losses:?}");

    let ckpt = dir.path().join("m.ckpt");
    save_checkpoint(&ckpt, &model, &vocab.hash()).unwrap();
    let restored = load_checkpoint(&ckpt, &vocab.hash()).unwrap();

    let train_shapes: Vec<Shape> = train.iter().map(|p| execute(p).unwrap()).collect();
    let sc = SearchConfig { k: 3, ..Default::default() };
    let mut detections: Vec<Vec<Detection>> = Vec::new();
    for p in &test {
        let shape = execute(p).unwrap();
        let a = beam_decode(&model, &vocab, &shape, &sc).unwrap();
        let b = beam_decode(&restored, &vocab, &shape, &sc).unwrap();
        assert_eq!(a.candidates.len(), b.candidates.len());
        for (x, y) in a.candidates.iter().zip(&b.candidates) {
            assert_eq!(x.tokens, y.tokens);
            assert_eq!(x.log_prob, y.log_prob);
        }
        assert!(a.candidates.windows(2).all(|w| w[0].log_prob >= w[1].log_prob));
        let g = greedy_decode(&model, &vocab, &shape, &sc.reward).unwrap();
        assert!(g.log_prob.is_finite());

        let target = Target::new(&shape);
        let start = match a.best().valid {
            true => a.best().program.clone(),
            false => train[nn_retrieve(&shape, &train_shapes).unwrap().index].clone(),
        };
        let r = refine(&start, &target, &RefineConfig::default()).unwrap();
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]), "{:?}", r.trace);
        let (Shape::Flat(t), Shape::Flat(s)) = (&shape, &execute(&r.program).unwrap()) else { unreachable!() };
        assert_eq!(chamfer(t, s), r.objective());

        detections.push(detections_from_beam(a.candidates.iter().map(|c| &c.program)));
    }
    let truths: Vec<_> = test.iter().map(ground_truth).collect();
    let report = evaluate_map(&detections, &truths, 0.5);
    assert!((0.0..=1.0).contains(&report.map));
    let perfect: Vec<Vec<Detection>> = test.iter().map(|p| detections_from_beam([p])).collect();
    assert_eq!(evaluate_map(&perfect, &truths, 0.5).map, 1.0);
}

#[test]
fn voxel_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = dataset(Mode::Three, dir.path());
    let vocab = Vocabulary::build(Mode::Three);
    let model = PolicyModel::new(PolicyConfig::desk(Mode::Three, vocab.len()), 1).unwrap();
    let shape = execute(&test[0]).unwrap();
    let g = greedy_decode(&model, &vocab, &shape, &SearchConfig::default().reward).unwrap();
    assert!(g.tokens.len() <= model.config().max_len + 1);
    let shapes: Vec<Shape> = train.iter().map(|p| execute(p).unwrap()).collect();
    let nn = nn_retrieve(&execute(&train[5]).unwrap(), &shapes).unwrap();
    assert_eq!(nn.distance, 0.0);
}
