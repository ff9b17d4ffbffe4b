//! CIFAR-10 and CIFAR-layout SVHN ingestion, normalization and batching.
//!
//! Every record is one label byte followed by 3072 pixel bytes: the red,
//! green and blue 32x32 planes in that order, each row-major.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_SIDE: usize = 32;
pub const IMAGE_BYTES: usize = 3 * IMAGE_SIDE * IMAGE_SIDE;
pub const RECORD_BYTES: usize = 1 + IMAGE_BYTES;
pub const NUM_CLASSES: usize = 10;
pub const CIFAR_RECORDS_PER_FILE: usize = 10_000;
pub const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";
pub const SVHN_TRAIN_FILE: &str = "train.bin";
pub const SVHN_TEST_FILE: &str = "test.bin";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DatasetName {
    Cifar10,
    Svhn,
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetName::Cifar10 => "cifar10",
            DatasetName::Svhn => "svhn",
        })
    }
}

impl std::str::FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cifar10" => Ok(DatasetName::Cifar10),
            "svhn" => Ok(DatasetName::Svhn),
            other => Err(Error::Config(format!("unknown dataset `{other}` (expected cifar10 or svhn)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

/// Images kept as raw bytes, `[N, 3, 32, 32]`, converted to floats per batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledImageSet {
    pub name: DatasetName,
    pub split: Split,
    images: Vec<u8>,
    labels: Vec<u8>,
}

impl LabeledImageSet {
    pub fn new(name: DatasetName, split: Split, images: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        if images.len() != labels.len() * IMAGE_BYTES {
            return Err(Error::Config(format!(
                "{} labels need {} image bytes, got {}",
                labels.len(),
                labels.len() * IMAGE_BYTES,
                images.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::Config(format!("label {bad} is outside [0, {NUM_CLASSES})")));
        }
        Ok(Self {
            name,
            split,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        &self.images[i * IMAGE_BYTES..(i + 1) * IMAGE_BYTES]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.len(), 3, IMAGE_SIDE, IMAGE_SIDE]
    }

    /// The first `n` examples (all of them if `n` exceeds the size).
    pub fn subset(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            name: self.name,
            split: self.split,
            images: self.images[..n * IMAGE_BYTES].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// Examples reordered by `order`, which must index into this set.
    pub fn select(&self, order: &[usize]) -> Self {
        let mut images = Vec::with_capacity(order.len() * IMAGE_BYTES);
        for &i in order {
            images.extend_from_slice(self.image(i));
        }
        Self {
            name: self.name,
            split: self.split,
            images,
            labels: order.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Serialized records in file order.
    pub fn to_records(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * RECORD_BYTES);
        for i in 0..self.len() {
            out.push(self.labels[i]);
            out.extend_from_slice(self.image(i));
        }
        out
    }

    pub fn write_records(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_records())?;
        Ok(())
    }
}

/// Splits a record buffer into image and label bytes. Example `i` occupies
/// bytes `[i * 3073, (i + 1) * 3073)`.
pub fn parse_records(bytes: &[u8], path: &Path) -> Result<(Vec<u8>, Vec<u8>)> {
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(Error::Dataset {
            path: path.to_path_buf(),
            detail: format!(
                "truncated record: {} bytes is not a multiple of the {RECORD_BYTES}-byte record",
                bytes.len()
            ),
        });
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut images = Vec::with_capacity(n * IMAGE_BYTES);
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        if rec[0] as usize >= NUM_CLASSES {
            return Err(Error::Dataset {
                path: path.to_path_buf(),
                detail: format!("record {i} has label {} outside [0, {NUM_CLASSES})", rec[0]),
            });
        }
        labels.push(rec[0]);
        images.extend_from_slice(&rec[1..]);
    }
    Ok((images, labels))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Dataset {
        path: path.to_path_buf(),
        detail: format!("cannot read: {e}"),
    })
}

fn check_dir(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Error::Dataset {
            path: dir.to_path_buf(),
            detail: "data directory does not exist".into(),
        })
    }
}

/// Reads one CIFAR-10 batch file, which must hold exactly 10,000 records.
pub fn load_cifar_file(path: &Path, name: DatasetName, split: Split) -> Result<LabeledImageSet> {
    let bytes = read_file(path)?;
    let expected = CIFAR_RECORDS_PER_FILE * RECORD_BYTES;
    if bytes.len() != expected {
        return Err(Error::Dataset {
            path: path.to_path_buf(),
            detail: format!("expected {expected} bytes, found {}", bytes.len()),
        });
    }
    let (images, labels) = parse_records(&bytes, path)?;
    LabeledImageSet::new(name, split, images, labels)
}

fn concat(parts: Vec<LabeledImageSet>, name: DatasetName, split: Split) -> Result<LabeledImageSet> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for p in parts {
        images.extend_from_slice(&p.images);
        labels.extend_from_slice(&p.labels);
    }
    LabeledImageSet::new(name, split, images, labels)
}

/// Resolves the directory holding the binary batches; the standard archive
/// unpacks into `cifar-10-batches-bin`.
fn cifar_root(dir: &Path) -> PathBuf {
    let nested = dir.join("cifar-10-batches-bin");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

/// Loads the five training batches and the test batch of the binary distribution.
pub fn load_cifar10(dir: &Path) -> Result<(LabeledImageSet, LabeledImageSet)> {
    check_dir(dir)?;
    let root = cifar_root(dir);
    let train = CIFAR_TRAIN_FILES
        .iter()
        .map(|f| load_cifar_file(&root.join(f), DatasetName::Cifar10, Split::Train))
        .collect::<Result<Vec<_>>>()?;
    let train = concat(train, DatasetName::Cifar10, Split::Train)?;
    let test = load_cifar_file(&root.join(CIFAR_TEST_FILE), DatasetName::Cifar10, Split::Test)?;
    Ok((train, test))
}

/// Loads `train.bin` and `test.bin` holding SVHN in the CIFAR record layout.
pub fn load_svhn(dir: &Path) -> Result<(LabeledImageSet, LabeledImageSet)> {
    check_dir(dir)?;
    let load = |file: &str, split| -> Result<LabeledImageSet> {
        let path = dir.join(file);
        let (images, labels) = parse_records(&read_file(&path)?, &path)?;
        LabeledImageSet::new(DatasetName::Svhn, split, images, labels)
    };
    Ok((load(SVHN_TRAIN_FILE, Split::Train)?, load(SVHN_TEST_FILE, Split::Test)?))
}

pub fn load(name: DatasetName, dir: &Path) -> Result<(LabeledImageSet, LabeledImageSet)> {
    match name {
        DatasetName::Cifar10 => load_cifar10(dir),
        DatasetName::Svhn => load_svhn(dir),
    }
}

/// Per-channel mean and standard deviation of pixels scaled to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for ChannelStats {
    fn default() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

const CHANNEL_NAMES: [&str; 3] = ["r", "g", "b"];

impl ChannelStats {
    pub fn from_set(set: &LabeledImageSet) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::Config("cannot compute statistics of an empty set".into()));
        }
        let plane = IMAGE_SIDE * IMAGE_SIDE;
        let mut sum = [0u64; 3];
        let mut sq = [0u64; 3];
        for i in 0..set.len() {
            for (c, px) in set.image(i).chunks_exact(plane).enumerate() {
                for &p in px {
                    sum[c] += p as u64;
                    sq[c] += (p as u64) * (p as u64);
                }
            }
        }
        let n = (set.len() * plane) as f64;
        let mut stats = Self::default();
        for c in 0..3 {
            let mean = sum[c] as f64 / n / 255.0;
            let var = (sq[c] as f64 / n / (255.0 * 255.0) - mean * mean).max(0.0);
            stats.mean[c] = mean as f32;
            stats.std[c] = (var.sqrt() as f32).max(1e-6);
        }
        Ok(stats)
    }

    /// `name: value` lines (`mean_r`, `mean_g`, `mean_b`, `std_r`, `std_g`, `std_b`).
    pub fn to_sidecar(&self) -> String {
        let mut s = String::new();
        for (c, n) in CHANNEL_NAMES.iter().enumerate() {
            s.push_str(&format!("mean_{n}: {}\n", self.mean[c]));
        }
        for (c, n) in CHANNEL_NAMES.iter().enumerate() {
            s.push_str(&format!("std_{n}: {}\n", self.std[c]));
        }
        s
    }

    pub fn from_sidecar(text: &str) -> Result<Self> {
        let mut stats = Self::default();
        let mut seen = [false; 6];
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("malformed statistics line `{line}`")))?;
            let value: f32 = value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad number in statistics line `{line}`")))?;
            let slot = match key.trim().split_once('_') {
                Some(("mean", ch)) => CHANNEL_NAMES.iter().position(|n| *n == ch),
                Some(("std", ch)) => CHANNEL_NAMES.iter().position(|n| *n == ch).map(|c| c + 3),
                _ => None,
            }
            .ok_or_else(|| Error::Config(format!("unknown statistics key `{}`", key.trim())))?;
            if slot < 3 {
                stats.mean[slot] = value;
            } else if value > 0.0 {
                stats.std[slot - 3] = value;
            } else {
                return Err(Error::Config(format!("standard deviation must be positive in `{line}`")));
            }
            seen[slot] = true;
        }
        if seen.iter().all(|&s| s) {
            Ok(stats)
        } else {
            Err(Error::Config("statistics file must define mean_r/g/b and std_r/g/b".into()))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_sidecar())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_sidecar(&fs::read_to_string(path)?)
    }

    /// Byte to `[0, 1]`, then standardized.
    pub fn normalize(&self, channel: usize, byte: u8) -> f32 {
        (byte as f32 / 255.0 - self.mean[channel]) / self.std[channel]
    }
}

/// Converts examples `idx` of `set` into a normalized `[B, 3, 32, 32]` tensor and labels.
pub fn make_batch(set: &LabeledImageSet, idx: &[usize], stats: &ChannelStats) -> Result<(Tensor<f32>, Vec<usize>)> {
    let plane = IMAGE_SIDE * IMAGE_SIDE;
    let mut data = Vec::with_capacity(idx.len() * IMAGE_BYTES);
    for &i in idx {
        for (c, px) in set.image(i).chunks_exact(plane).enumerate() {
            data.extend(px.iter().map(|&p| stats.normalize(c, p)));
        }
    }
    let x = Tensor::new(vec![idx.len(), 3, IMAGE_SIDE, IMAGE_SIDE], data)?;
    Ok((x, idx.iter().map(|&i| set.label(i)).collect()))
}

/// One epoch of mini-batches; the last batch may be short.
pub struct Batches<'a> {
    set: &'a LabeledImageSet,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    stats: ChannelStats,
}

impl<'a> Batches<'a> {
    /// Example indices in visiting order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for Batches<'_> {
    type Item = Result<(Tensor<f32>, Vec<usize>)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        Some(make_batch(self.set, idx, &self.stats))
    }
}

/// Iterates `set` in batches. With `shuffle`, the order is a permutation
/// determined by `seed` alone.
pub fn batches<'a>(
    set: &'a LabeledImageSet,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
    stats: &ChannelStats,
) -> Result<Batches<'a>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if set.is_empty() {
        return Err(Error::Config(format!("cannot batch an empty {} set", set.name)));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(Batches {
        set,
        order,
        batch_size,
        pos: 0,
        stats: *stats,
    })
}

/// A learnable stand-in with the CIFAR record layout: each class has a smooth
/// random colour pattern, and examples add pixel noise to their class pattern.
/// Labels cycle through the classes so every class is equally represented.
pub fn synthetic(name: DatasetName, split: Split, n: usize, seed: u64) -> Result<LabeledImageSet> {
    // Prototypes depend only on the base seed so train and test share classes.
    let mut proto_rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = IMAGE_SIDE * IMAGE_SIDE;
    let prototypes: Vec<Vec<f32>> = (0..NUM_CLASSES)
        .map(|_| {
            let mut p = vec![0f32; IMAGE_BYTES];
            for c in 0..3 {
                let base: f32 = proto_rng.random_range(40.0..215.0);
                let fx: f32 = proto_rng.random_range(0.5..3.0);
                let fy: f32 = proto_rng.random_range(0.5..3.0);
                let phase: f32 = proto_rng.random_range(0.0..std::f32::consts::TAU);
                let amp: f32 = proto_rng.random_range(20.0..60.0);
                for y in 0..IMAGE_SIDE {
                    for x in 0..IMAGE_SIDE {
                        let t = fx * x as f32 / IMAGE_SIDE as f32 + fy * y as f32 / IMAGE_SIDE as f32;
                        p[c * plane + y * IMAGE_SIDE + x] = base + amp * (std::f32::consts::TAU * t + phase).sin();
                    }
                }
            }
            p
        })
        .collect();
    let split_salt = match split {
        Split::Train => 1,
        Split::Test => 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (split_salt << 32));
    let noise = Normal::new(0.0f32, 24.0).map_err(|e| Error::Config(e.to_string()))?;
    let mut images = Vec::with_capacity(n * IMAGE_BYTES);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % NUM_CLASSES;
        labels.push(label as u8);
        images.extend(
            prototypes[label]
                .iter()
                .map(|&v| (v + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8),
        );
    }
    LabeledImageSet::new(name, split, images, labels)
}
