use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;

use super::{Optimizer, TrainConfig};
use crate::data::{batches, ChannelStats, LabeledImageSet, IMAGE_SIDE};
use crate::error::{Error, Result};
use crate::graph::{forward_eval, forward_train, ModelGraph, Weights};
use crate::tensor::Float;

/// Header line of the per-epoch metrics log.
pub const LOG_HEADER: &str = "epoch\tlr\ttrain_loss\ttest_error";

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    /// Mean cross-entropy over every training example seen in the epoch.
    pub train_loss: f64,
    /// Top-1 error in percent, when a test set was supplied.
    pub test_error: Option<f64>,
}

impl EpochMetrics {
    pub fn log_line(&self) -> String {
        let err = self.test_error.map_or_else(|| "nan".to_string(), |e| format!("{e:.4}"));
        format!("{}\t{:e}\t{:.6}\t{err}", self.epoch, self.lr, self.train_loss)
    }
}

/// Where training writes its metrics log and checkpoints.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    pub log: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Also rewrite the checkpoint after every epoch, not only at the end.
    pub checkpoint_each_epoch: bool,
}

fn append_log(path: &PathBuf, line: &str) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if f.metadata()?.len() == 0 {
        writeln!(f, "{LOG_HEADER}")?;
    }
    writeln!(f, "{line}")?;
    Ok(())
}

fn check_image_size(graph: &ModelGraph) -> Result<()> {
    if graph.config().input_size != IMAGE_SIDE {
        return Err(Error::Config(format!(
            "model input size {} differs from the dataset image size {IMAGE_SIDE}",
            graph.config().input_size
        )));
    }
    Ok(())
}

/// Trains `weights` in place with Adam under the configured schedule.
/// `on_epoch` runs once per epoch, in order, after the metrics are final.
#[allow(clippy::too_many_arguments)]
pub fn train(
    graph: &ModelGraph,
    weights: &mut Weights<f32>,
    train_set: &LabeledImageSet,
    test_set: Option<&LabeledImageSet>,
    stats: &ChannelStats,
    config: &TrainConfig,
    outputs: &TrainOutputs,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    config.validate()?;
    check_image_size(graph)?;
    let mut opt = Optimizer::new(weights, config.adam());
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let seed = config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64);
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        for (step, batch) in batches(train_set, config.batch_size, true, seed, stats)?.enumerate() {
            let (x, labels) = batch?;
            let fwd = forward_train(graph, weights, &x)?;
            let loss = fwd.backward(&labels, weights)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            opt.step(weights, lr)?;
            loss_sum += loss.as_f64() * labels.len() as f64;
            seen += labels.len();
        }
        let test_error = match test_set {
            Some(t) => Some(evaluate(graph, weights, t, stats, config.batch_size)?),
            None => None,
        };
        let m = EpochMetrics {
            epoch,
            lr,
            train_loss: loss_sum / seen as f64,
            test_error,
        };
        if let Some(log) = &outputs.log {
            append_log(log, &m.log_line())?;
        }
        if outputs.checkpoint_each_epoch {
            if let Some(ck) = &outputs.checkpoint {
                weights.save(ck)?;
            }
        }
        on_epoch(&m);
        history.push(m);
    }
    if let Some(ck) = &outputs.checkpoint {
        weights.save(ck)?;
    }
    Ok(history)
}

/// Arg-max class per example, computed with eval-mode batch norm.
pub fn predict<T: Float>(
    graph: &ModelGraph,
    weights: &Weights<T>,
    set: &LabeledImageSet,
    stats: &ChannelStats,
    batch_size: usize,
) -> Result<Vec<usize>> {
    check_image_size(graph)?;
    let mut out = Vec::with_capacity(set.len());
    for batch in batches(set, batch_size, false, 0, stats)? {
        let (x, _) = batch?;
        let logits = forward_eval(graph, weights, &x.cast::<T>())?;
        let k = logits.shape()[1];
        for row in logits.data().chunks_exact(k) {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}

/// Top-1 error rate in percent over the whole set.
pub fn evaluate<T: Float>(
    graph: &ModelGraph,
    weights: &Weights<T>,
    set: &LabeledImageSet,
    stats: &ChannelStats,
    batch_size: usize,
) -> Result<f64> {
    let pred = predict(graph, weights, set, stats, batch_size)?;
    let wrong = pred.iter().enumerate().filter(|(i, &p)| p != set.label(*i)).count();
    Ok(100.0 * wrong as f64 / set.len() as f64)
}
