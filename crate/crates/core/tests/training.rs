use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::tempdir;
use triplenet_core::data::*;
use triplenet_core::graph::*;
use triplenet_core::train::*;
use triplenet_core::Error;

fn small_graph() -> ModelGraph {
    build(&ModelConfig::new(Variant::S).with_input_size(32)).unwrap()
}

fn quick_config(epochs: usize, batch_size: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size,
        seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn fixed_batch_loss_decreases() {
    let g = small_graph();
    let mut w = Weights::<f32>::init(&g, 4).unwrap();
    let set = synthetic(DatasetName::Cifar10, Split::Train, 10, 4).unwrap();
    let stats = ChannelStats::from_set(&set).unwrap();
    let (x, labels) = make_batch(&set, &(0..10).collect::<Vec<_>>(), &stats).unwrap();
    let mut opt = Optimizer::new(&w, TrainConfig::default().adam());
    let mut losses = Vec::new();
    for _ in 0..20 {
        let fwd = forward_train(&g, &mut w, &x).unwrap();
        losses.push(fwd.backward(&labels, &mut w).unwrap());
        opt.step(&mut w, 1e-3).unwrap();
    }
    let rises = losses.windows(2).filter(|p| p[1] > p[0]).count();
    assert!(rises <= 2, "{losses:?}");
    assert!(losses[19] < 0.5 * losses[0], "{losses:?}");
}

#[test]
fn training_is_reproducible_and_reports_each_epoch() {
    let g = small_graph();
    let set = synthetic(DatasetName::Cifar10, Split::Train, 24, 5).unwrap();
    let test = synthetic(DatasetName::Cifar10, Split::Test, 10, 5).unwrap();
    let stats = ChannelStats::from_set(&set).unwrap();
    let dir = tempdir().unwrap();
    let run = |name: &str| {
        let mut w = Weights::<f32>::init(&g, 6).unwrap();
        let mut seen = Vec::new();
        let outputs = TrainOutputs {
            log: Some(dir.path().join(format!("{name}.log"))),
            checkpoint: Some(dir.path().join(format!("{name}.tpln"))),
            checkpoint_each_epoch: true,
        };
        let hist = train(&g, &mut w, &set, Some(&test), &stats, &quick_config(2, 8), &outputs, |m| {
            seen.push(m.epoch)
        })
        .unwrap();
        assert_eq!(seen, vec![0, 1]);
        assert_eq!(hist.len(), 2);
        assert!(hist.iter().all(|m| (0.0..=100.0).contains(&m.test_error.unwrap())));
        (hist, w, std::fs::read_to_string(outputs.log.unwrap()).unwrap())
    };
    let (h1, w1, log1) = run("a");
    let (h2, w2, log2) = run("b");
    assert_eq!(h1, h2);
    assert_eq!(w1, w2);
    assert_eq!(log1, log2);
    assert_eq!(log1.lines().next().unwrap(), LOG_HEADER);
    assert_eq!(log1.lines().count(), 3);
    let saved = Weights::load(&g, &dir.path().join("a.tpln")).unwrap();
    assert_eq!(saved, w1);
}

#[test]
fn non_finite_loss_stops_training() {
    let g = small_graph();
    let mut w = Weights::<f32>::init(&g, 0).unwrap();
    let id = w.ids().find(|&i| w.name(i) == "classifier.weight").unwrap();
    w.get_mut(id).data_mut()[0] = f32::NAN;
    let set = synthetic(DatasetName::Cifar10, Split::Train, 4, 0).unwrap();
    let stats = ChannelStats::from_set(&set).unwrap();
    let err = train(&g, &mut w, &set, None, &stats, &quick_config(1, 4), &TrainOutputs::default(), |_| {}).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { epoch: 0, step: 0 }), "{err}");
}

#[test]
fn untrained_model_is_at_chance() {
    // Images are noise and labels cycle, so no predictor can beat 90% error
    // in expectation; 1000 examples put the 3-sigma band near +-2.8 points.
    let n = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let images: Vec<u8> = (0..n * IMAGE_BYTES).map(|_| rng.random()).collect();
    let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    let set = LabeledImageSet::new(DatasetName::Cifar10, Split::Test, images, labels).unwrap();
    let stats = ChannelStats::from_set(&set).unwrap();
    let g = small_graph();
    let w = Weights::<f32>::init(&g, 3).unwrap();
    let err = evaluate(&g, &w, &set, &stats, 100).unwrap();
    assert!((87.0..=93.0).contains(&err), "{err}");
}

#[test]
fn memorizes_a_tiny_set() {
    let g = small_graph();
    let mut w = Weights::<f32>::init(&g, 8).unwrap();
    let set = synthetic(DatasetName::Cifar10, Split::Train, 10, 8).unwrap();
    let stats = ChannelStats::from_set(&set).unwrap();
    let cfg = TrainConfig {
        drop_points: [0.9, 0.95],
        ..quick_config(30, 10)
    };
    let hist = train(&g, &mut w, &set, None, &stats, &cfg, &TrainOutputs::default(), |_| {}).unwrap();
    assert!(hist.last().unwrap().train_loss < 0.01);

    // With ten examples per batch the running statistics lag the batch
    // statistics, so refresh them with one full-batch pass at momentum 1.
    let mut refresh = ModelConfig::new(Variant::S).with_input_size(32);
    refresh.batch_norm.momentum = 1.0;
    let refresh = build(&refresh).unwrap();
    let all: Vec<usize> = (0..10).collect();
    let (x, labels) = make_batch(&set, &all, &stats).unwrap();
    let fwd = forward_train(&refresh, &mut w, &x).unwrap();
    let argmax: Vec<usize> = fwd
        .logits()
        .data()
        .chunks(10)
        .map(|r| (0..10).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap())
        .collect();
    assert_eq!(argmax, labels);
    drop(fwd);

    assert_eq!(evaluate(&g, &w, &set, &stats, 10).unwrap(), 0.0);
    // Error does not depend on example order or batch size.
    let reversed = set.select(&all.iter().rev().copied().collect::<Vec<_>>());
    assert_eq!(evaluate(&g, &w, &reversed, &stats, 3).unwrap(), 0.0);
}

#[test]
fn wrong_input_size_is_rejected() {
    let g = build(&ModelConfig::new(Variant::S).with_input_size(64)).unwrap();
    let w = Weights::<f32>::init(&g, 0).unwrap();
    let set = synthetic(DatasetName::Cifar10, Split::Test, 2, 0).unwrap();
    let stats = ChannelStats::from_set(&set).unwrap();
    assert!(matches!(evaluate(&g, &w, &set, &stats, 2), Err(Error::Config(_))));
}
