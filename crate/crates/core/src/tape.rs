//! Reverse-mode differentiation over a linear record of executed primitives.
//!
//! Every primitive appends one record holding its output value and whatever it
//! needs for the backward pass. [`PrimitiveTape::backward_from`] walks the
//! records in exact reverse order and sums gradient contributions for values
//! consumed more than once.

use crate::error::{arg_err, shape_err, Error, Result};
use crate::kernels::{self, BatchNormCache, BatchStats};
use crate::tensor::{Float, Tensor};

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, stride: usize, pad: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, cache: BatchNormCache<T> },
    Relu { x: Var },
    MaxPool { x: Var, argmax: Vec<usize> },
    AvgPool { x: Var, kernel: usize, stride: usize },
    GlobalAvgPool { x: Var },
    Concat { inputs: Vec<Var> },
    Add { a: Var, b: Var },
    Flatten { x: Var },
    Linear { x: Var, w: Var, bias: Var },
    SoftmaxCrossEntropy { logits: Var, probs: Tensor<T>, labels: Vec<usize> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batchnorm2d",
            Op::Relu { .. } => "relu",
            Op::MaxPool { .. } => "maxpool2d",
            Op::AvgPool { .. } => "avgpool2d",
            Op::GlobalAvgPool { .. } => "global_avgpool",
            Op::Concat { .. } => "concat_channels",
            Op::Add { .. } => "add",
            Op::Flatten { .. } => "flatten",
            Op::Linear { .. } => "linear",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Record<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of executed primitives.
#[derive(Debug, Default)]
pub struct PrimitiveTape<T: Float = f32> {
    records: Vec<Record<T>>,
    consumed: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    visited: Vec<usize>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }

    /// Record indices in the order backward processed them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

impl<T: Float> PrimitiveTape<T> {
    pub fn new() -> Self {
        Self {
            records: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.records[var.0].value
    }

    pub fn op_name(&self, var: Var) -> &'static str {
        self.records[var.0].op.name()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.records.push(Record {
            value,
            op,
            requires_grad,
        });
        Var(self.records.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.records[v.0].requires_grad)
    }

    fn check_live(&self) -> Result<()> {
        if self.consumed {
            Err(Error::TapeConsumed)
        } else {
            Ok(())
        }
    }

    /// Records an input. Parameters use `requires_grad = true`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        self.check_live()?;
        let y = kernels::conv2d(self.value(x), self.value(w), stride, pad)?;
        let rg = self.needs(&[x, w]);
        Ok(self.push(y, Op::Conv2d { x, w, stride, pad }, rg))
    }

    /// Training-mode batch norm; returns the batch statistics for the running-stat update.
    pub fn batchnorm2d(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        self.check_live()?;
        let (y, stats, cache) = kernels::batchnorm2d_train(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        )?;
        let rg = self.needs(&[x, gamma, beta]);
        Ok((self.push(y, Op::BatchNorm { x, gamma, beta, cache }, rg), stats))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check_live()?;
        let y = kernels::relu(self.value(x))?;
        let rg = self.needs(&[x]);
        Ok(self.push(y, Op::Relu { x }, rg))
    }

    pub fn maxpool2d(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        self.check_live()?;
        let (y, argmax) = kernels::maxpool2d(self.value(x), kernel, stride, pad)?;
        let rg = self.needs(&[x]);
        Ok(self.push(y, Op::MaxPool { x, argmax }, rg))
    }

    pub fn avgpool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        self.check_live()?;
        let y = kernels::avgpool2d(self.value(x), kernel, stride)?;
        let rg = self.needs(&[x]);
        Ok(self.push(y, Op::AvgPool { x, kernel, stride }, rg))
    }

    pub fn global_avgpool(&mut self, x: Var) -> Result<Var> {
        self.check_live()?;
        let y = kernels::global_avgpool(self.value(x))?;
        let rg = self.needs(&[x]);
        Ok(self.push(y, Op::GlobalAvgPool { x }, rg))
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        self.check_live()?;
        let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
        let y = kernels::concat_channels(&values)?;
        let rg = self.needs(inputs);
        Ok(self.push(
            y,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_live()?;
        let y = kernels::add(self.value(a), self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(y, Op::Add { a, b }, rg))
    }

    /// `[B, ...] -> [B, F]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        self.check_live()?;
        let v = self.value(x);
        let b = v.shape()[0];
        let f = v.len() / b;
        let y = v.clone().reshape(vec![b, f])?;
        let rg = self.needs(&[x]);
        Ok(self.push(y, Op::Flatten { x }, rg))
    }

    pub fn linear(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        self.check_live()?;
        let y = kernels::linear(self.value(x), self.value(w), self.value(bias))?;
        let rg = self.needs(&[x, w, bias]);
        Ok(self.push(y, Op::Linear { x, w, bias }, rg))
    }

    /// Mean cross-entropy; the result is a scalar of shape `[1]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.check_live()?;
        let (loss, probs) = kernels::softmax_cross_entropy(self.value(logits), labels)?;
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Backward from a scalar `loss` seeded with `loss_grad`.
    pub fn backward(&mut self, loss: Var, loss_grad: T) -> Result<Gradients<T>> {
        if self.records.get(loss.0).map(|r| r.value.len()) != Some(1) {
            return Err(arg_err("backward", "loss must be a recorded scalar"));
        }
        self.backward_from(loss, Tensor::scalar(loss_grad))
    }

    /// Backward from any recorded value with an explicit upstream gradient.
    /// Every leaf that requires a gradient receives one (zeros if unreached).
    pub fn backward_from(&mut self, output: Var, upstream: Tensor<T>) -> Result<Gradients<T>> {
        self.check_live()?;
        let out_len = self
            .records
            .get(output.0)
            .ok_or_else(|| arg_err("backward", "unknown output variable"))?
            .value
            .len();
        if upstream.len() != out_len {
            return Err(shape_err(
                "backward",
                format!("upstream gradient has {} elements, output has {out_len}", upstream.len()),
            ));
        }
        self.consumed = true;

        let n = self.records.len();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        grads[output.0] = Some(upstream.into_data());
        let mut visited = Vec::with_capacity(output.0 + 1);

        for idx in (0..=output.0).rev() {
            visited.push(idx);
            let rec = &self.records[idx];
            if !rec.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let dy = Tensor::new(rec.value.shape().to_vec(), g)?;
            let contributions = self.local_grads(idx, &dy)?;
            if matches!(rec.op, Op::Leaf) {
                grads[idx] = Some(dy.into_data());
                continue;
            }
            for (var, contrib) in contributions {
                if !self.records[var.0].requires_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(contrib.data()) {
                            *a += *c;
                        }
                    }
                    slot @ None => *slot = Some(contrib.into_data()),
                }
            }
        }

        let grads = self
            .records
            .iter()
            .zip(grads)
            .map(|(rec, g)| match (&rec.op, g) {
                (Op::Leaf, Some(g)) if rec.requires_grad => Tensor::new(rec.value.shape().to_vec(), g).ok(),
                (Op::Leaf, None) if rec.requires_grad => Tensor::zeros(rec.value.shape()).ok(),
                _ => None,
            })
            .collect();

        // Intermediates are no longer needed once gradients have reached the leaves.
        for rec in &mut self.records {
            if !matches!(rec.op, Op::Leaf) {
                rec.op = Op::Leaf;
            }
        }

        Ok(Gradients { grads, visited })
    }

    fn wants(&self, var: Var) -> bool {
        self.records[var.0].requires_grad
    }

    /// Gradient contributions of record `idx` to its inputs.
    fn local_grads(&self, idx: usize, dy: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let out = match &self.records[idx].op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { x, w, stride, pad } => {
                let (dx, dw) = kernels::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    dy,
                    *stride,
                    *pad,
                    self.wants(*x),
                )?;
                let mut v = vec![(*w, dw)];
                if let Some(dx) = dx {
                    v.push((*x, dx));
                }
                v
            }
            Op::BatchNorm { x, gamma, beta, cache } => {
                let (dx, dgamma, dbeta) = kernels::batchnorm2d_backward(dy, cache, self.value(*gamma).data())?;
                let c = dgamma.len();
                vec![
                    (*x, dx),
                    (*gamma, Tensor::new(vec![c], dgamma)?),
                    (*beta, Tensor::new(vec![c], dbeta)?),
                ]
            }
            Op::Relu { x } => vec![(*x, kernels::relu_backward(self.value(*x), dy)?)],
            Op::MaxPool { x, argmax } => {
                vec![(*x, kernels::maxpool2d_backward(dy, argmax, self.value(*x).shape())?)]
            }
            Op::AvgPool { x, kernel, stride } => vec![(
                *x,
                kernels::avgpool2d_backward(dy, self.value(*x).shape(), *kernel, *stride)?,
            )],
            Op::GlobalAvgPool { x } => {
                vec![(*x, kernels::global_avgpool_backward(dy, self.value(*x).shape())?)]
            }
            Op::Concat { inputs } => {
                let channels: Vec<usize> = inputs.iter().map(|v| self.value(*v).shape()[1]).collect();
                inputs
                    .iter()
                    .copied()
                    .zip(kernels::split_channels(dy, &channels)?)
                    .collect()
            }
            Op::Add { a, b } => vec![(*a, dy.clone()), (*b, dy.clone())],
            Op::Flatten { x } => vec![(*x, dy.clone().reshape(self.value(*x).shape().to_vec())?)],
            Op::Linear { x, w, bias } => {
                let (dx, dw, db) = kernels::linear_backward(self.value(*x), self.value(*w), dy)?;
                let db = db.reshape(self.value(*bias).shape().to_vec())?;
                vec![(*x, dx), (*w, dw), (*bias, db)]
            }
            Op::SoftmaxCrossEntropy { logits, probs, labels } => {
                vec![(
                    *logits,
                    kernels::softmax_cross_entropy_backward(probs, labels, dy.data()[0])?,
                )]
            }
        };
        Ok(out)
    }
}
