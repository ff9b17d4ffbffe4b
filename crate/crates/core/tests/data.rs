use std::collections::BTreeMap;

use proptest::prelude::*;
use tempfile::tempdir;
use triplenet_core::data::*;
use triplenet_core::Error;

fn ramp_record(label: u8) -> Vec<u8> {
    let mut rec = vec![label];
    rec.extend((0..IMAGE_BYTES).map(|i| (i % 256) as u8));
    rec
}

fn identity_stats() -> ChannelStats {
    ChannelStats {
        mean: [0.0; 3],
        std: [1.0; 3],
    }
}

#[test]
fn single_record_decodes_planar_rgb() {
    let (images, labels) = parse_records(&ramp_record(7), "x".as_ref()).unwrap();
    assert_eq!(labels, vec![7]);
    let set = LabeledImageSet::new(DatasetName::Cifar10, Split::Train, images, labels).unwrap();
    let (x, y) = make_batch(&set, &[0], &identity_stats()).unwrap();
    assert_eq!(y, vec![7]);
    assert_eq!(x.shape(), &[1, 3, 32, 32]);
    // pixel (c, h, w) is byte 1 + c*1024 + h*32 + w of the record
    for (c, h, w) in [(0, 0, 0), (1, 3, 5), (2, 31, 31), (0, 7, 31)] {
        let byte = (c * 1024 + h * 32 + w) % 256;
        let got = x.data()[((c * 32) + h) * 32 + w];
        assert_eq!(got, byte as f32 / 255.0);
    }
}

#[test]
fn record_offsets_are_exact() {
    let mut bytes = Vec::new();
    for i in 0..4u8 {
        let mut rec = vec![i];
        rec.extend(std::iter::repeat_n(i * 10, IMAGE_BYTES));
        bytes.extend(rec);
    }
    let (images, labels) = parse_records(&bytes, "x".as_ref()).unwrap();
    let set = LabeledImageSet::new(DatasetName::Svhn, Split::Test, images, labels).unwrap();
    for i in 0..4 {
        assert_eq!(set.label(i), i);
        assert!(set.image(i).iter().all(|&b| b as usize == i * 10));
    }
    assert_eq!(set.to_records(), bytes);
}

#[test]
fn wrong_size_cifar_file_reports_both_sizes() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("data_batch_1.bin");
    std::fs::write(&path, ramp_record(1)).unwrap();
    let err = load_cifar_file(&path, DatasetName::Cifar10, Split::Train).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains(&(CIFAR_RECORDS_PER_FILE * RECORD_BYTES).to_string()), "{msg}");
    assert!(msg.contains("3073"), "{msg}");
    assert!(msg.contains("data_batch_1.bin"), "{msg}");
}

#[test]
fn svhn_fixture_loads() {
    let dir = tempdir().unwrap();
    let train = synthetic(DatasetName::Svhn, Split::Train, 5, 3).unwrap();
    let test = synthetic(DatasetName::Svhn, Split::Test, 2, 3).unwrap();
    train.write_records(&dir.path().join(SVHN_TRAIN_FILE)).unwrap();
    test.write_records(&dir.path().join(SVHN_TEST_FILE)).unwrap();
    let (a, b) = load(DatasetName::Svhn, dir.path()).unwrap();
    assert_eq!(a.shape(), [5, 3, 32, 32]);
    assert_eq!(b.len(), 2);
    assert_eq!(a.to_records(), train.to_records());
}

#[test]
fn truncated_and_mislabeled_records_are_rejected() {
    let mut bytes = ramp_record(3);
    bytes.pop();
    assert!(matches!(parse_records(&bytes, "t".as_ref()), Err(Error::Dataset { .. })));
    let err = parse_records(&ramp_record(12), "t".as_ref()).unwrap_err();
    assert!(err.to_string().contains("label 12"));
}

#[test]
fn missing_directory_names_the_path() {
    let err = load(DatasetName::Cifar10, "/nonexistent/cifar".as_ref()).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/cifar"));
}

#[test]
fn batch_sizes_cover_the_set() {
    let set = synthetic(DatasetName::Cifar10, Split::Train, 100, 0).unwrap();
    let stats = ChannelStats::from_set(&set).unwrap();
    let it = batches(&set, 64, true, 5, &stats).unwrap();
    assert_eq!(it.num_batches(), 2);
    let sizes: Vec<usize> = it.map(|b| b.unwrap().1.len()).collect();
    assert_eq!(sizes, vec![64, 36]);
    assert!(batches(&set, 0, true, 5, &stats).is_err());
}

#[test]
fn normalized_batches_have_unit_statistics() {
    let set = synthetic(DatasetName::Cifar10, Split::Train, 40, 0).unwrap();
    let stats = ChannelStats::from_set(&set).unwrap();
    let (x, _) = make_batch(&set, &(0..40).collect::<Vec<_>>(), &stats).unwrap();
    let plane = 32 * 32;
    for c in 0..3 {
        let vals: Vec<f64> = x
            .data()
            .chunks_exact(plane)
            .skip(c)
            .step_by(3)
            .flatten()
            .map(|&v| v as f64)
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-3, "{mean}");
        assert!((var.sqrt() - 1.0).abs() < 1e-3, "{var}");
    }
}

#[test]
fn stats_sidecar_file_round_trip() {
    let dir = tempdir().unwrap();
    let set = synthetic(DatasetName::Cifar10, Split::Train, 20, 0).unwrap();
    let stats = ChannelStats::from_set(&set).unwrap();
    let path = dir.path().join("s.stats");
    stats.save(&path).unwrap();
    let back = ChannelStats::load(&path).unwrap();
    for c in 0..3 {
        assert!((back.mean[c] - stats.mean[c]).abs() < 1e-6);
        assert!((back.std[c] - stats.std[c]).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn shuffled_epoch_is_a_permutation(n in 1usize..120, bs in 1usize..40, seed: u64) {
        let set = synthetic(DatasetName::Cifar10, Split::Train, n, 1).unwrap();
        let stats = identity_stats();
        let it = batches(&set, bs, true, seed, &stats).unwrap();
        let mut order = it.order().to_vec();
        let labels: Vec<usize> = it.flat_map(|b| b.unwrap().1).collect();
        let count = |v: &[usize]| v.iter().fold(BTreeMap::new(), |mut m, &l| { *m.entry(l).or_insert(0) += 1; m });
        let expect: Vec<usize> = (0..n).map(|i| set.label(i)).collect();
        prop_assert_eq!(count(&labels), count(&expect));
        order.sort_unstable();
        prop_assert_eq!(order, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn shuffle_depends_only_on_seed(seed: u64) {
        let set = synthetic(DatasetName::Cifar10, Split::Train, 50, 1).unwrap();
        let stats = identity_stats();
        let a = batches(&set, 8, true, seed, &stats).unwrap().order().to_vec();
        let b = batches(&set, 8, true, seed, &stats).unwrap().order().to_vec();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn records_round_trip(labels in prop::collection::vec(0u8..10, 1..6), fill: u8) {
        let n = labels.len();
        let set = LabeledImageSet::new(DatasetName::Svhn, Split::Train, vec![fill; n * IMAGE_BYTES], labels).unwrap();
        let (images, back) = parse_records(&set.to_records(), "p".as_ref()).unwrap();
        let again = LabeledImageSet::new(DatasetName::Svhn, Split::Train, images, back).unwrap();
        prop_assert_eq!(again.to_records(), set.to_records());
    }
}
