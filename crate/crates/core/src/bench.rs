//! Single-image inference latency measurement.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{arg_err, Result};
use crate::graph::{forward_eval, ModelGraph, Weights};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub images: usize,
    pub warmup: usize,
    pub total_seconds: f64,
    pub mean_ms: f64,
    pub std_ms: f64,
    /// Per-image latencies in milliseconds, in run order.
    pub samples_ms: Vec<f64>,
}

impl BenchResult {
    pub fn from_samples(samples_ms: Vec<f64>, warmup: usize) -> Result<Self> {
        if samples_ms.is_empty() {
            return Err(arg_err("bench", "at least one timed image is required"));
        }
        let n = samples_ms.len() as f64;
        let total_ms: f64 = samples_ms.iter().sum();
        let mean_ms = total_ms / n;
        let var = samples_ms.iter().map(|s| (s - mean_ms).powi(2)).sum::<f64>() / n;
        Ok(Self {
            images: samples_ms.len(),
            warmup,
            total_seconds: total_ms / 1e3,
            mean_ms,
            std_ms: var.sqrt(),
            samples_ms,
        })
    }

    /// Median per-image latency, less sensitive to scheduler noise than the mean.
    pub fn median_ms(&self) -> f64 {
        let mut s = self.samples_ms.clone();
        s.sort_by(f64::total_cmp);
        let mid = s.len() / 2;
        if s.len().is_multiple_of(2) {
            (s[mid - 1] + s[mid]) / 2.0
        } else {
            s[mid]
        }
    }
}

/// Runs `warmup` untimed forwards, then times `images` batch-1 eval-mode
/// forwards on a fixed random image. Model construction and weight loading
/// happen before this call and are not timed.
pub fn run(graph: &ModelGraph, weights: &Weights<f32>, images: usize, warmup: usize, seed: u64) -> Result<BenchResult> {
    if images == 0 {
        return Err(arg_err("bench", "at least one timed image is required"));
    }
    let s = graph.config().input_size;
    let x = Tensor::<f32>::randn(&[1, 3, s, s], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))?;
    for _ in 0..warmup {
        forward_eval(graph, weights, &x)?;
    }
    let mut samples = Vec::with_capacity(images);
    for _ in 0..images {
        let t = Instant::now();
        let y = forward_eval(graph, weights, &x)?;
        samples.push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(y);
    }
    BenchResult::from_samples(samples, warmup)
}
