//! Running a [`ModelGraph`] on the tensor engine.

use super::node::{NodeKind, ParamId};
use super::weights::Weights;
use super::ModelGraph;
use crate::error::{shape_err, Error, Result};
use crate::kernels;
use crate::tape::{PrimitiveTape, Var};
use crate::tensor::{Float, Tensor};

fn check_input<T: Float>(graph: &ModelGraph, x: &Tensor<T>) -> Result<()> {
    let s = graph.config().input_size;
    match x.shape() {
        &[b, 3, h, w] if b > 0 && h == s && w == s => Ok(()),
        other => Err(shape_err(
            "forward",
            format!("expected input [B, 3, {s}, {s}] for this model, got {other:?}"),
        )),
    }
}

fn check_weights<T: Float>(graph: &ModelGraph, weights: &Weights<T>) -> Result<()> {
    if weights.len() != graph.params().len() {
        return Err(Error::Checkpoint(format!(
            "weights hold {} tensors, the model declares {}",
            weights.len(),
            graph.params().len()
        )));
    }
    Ok(())
}

fn eps<T: Float>(graph: &ModelGraph) -> T {
    T::from_f64_lossy(graph.config().batch_norm.eps as f64)
}

/// Inference-mode forward pass returning logits `[B, num_classes]`.
/// Activations are dropped as soon as their last consumer has run.
pub fn forward_eval<T: Float>(graph: &ModelGraph, weights: &Weights<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    check_input(graph, x)?;
    check_weights(graph, weights)?;
    let last_use = graph.last_use();
    let mut values: Vec<Option<Tensor<T>>> = vec![None; graph.nodes().len()];
    let eps = eps::<T>(graph);

    for node in graph.nodes() {
        let input = |k: usize| -> Result<&Tensor<T>> {
            values[node.inputs[k].0].as_ref().ok_or_else(|| Error::Graph {
                node: node.name.clone(),
                detail: "input was released before use".into(),
            })
        };
        let y = match &node.kind {
            NodeKind::Input => x.clone(),
            NodeKind::Conv {
                stride, pad, weight, ..
            } => kernels::conv2d(input(0)?, weights.get(*weight), *stride, *pad)?,
            NodeKind::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
                ..
            } => kernels::batchnorm2d_eval(
                input(0)?,
                weights.get(*gamma).data(),
                weights.get(*beta).data(),
                weights.get(*running_mean).data(),
                weights.get(*running_var).data(),
                eps,
            )?,
            NodeKind::Relu => kernels::relu(input(0)?)?,
            NodeKind::MaxPool { kernel, stride, pad } => kernels::maxpool2d(input(0)?, *kernel, *stride, *pad)?.0,
            NodeKind::AvgPool { kernel, stride } => kernels::avgpool2d(input(0)?, *kernel, *stride)?,
            NodeKind::GlobalAvgPool => kernels::global_avgpool(input(0)?)?,
            NodeKind::Concat => {
                let xs = (0..node.inputs.len()).map(input).collect::<Result<Vec<_>>>()?;
                kernels::concat_channels(&xs)?
            }
            NodeKind::Add => kernels::add(input(0)?, input(1)?)?,
            NodeKind::Flatten => {
                let v = input(0)?;
                let b = v.shape()[0];
                v.clone().reshape(vec![b, v.len() / b])?
            }
            NodeKind::Linear { weight, bias, .. } => {
                kernels::linear(input(0)?, weights.get(*weight), weights.get(*bias))?
            }
        };
        let id = node.id.0;
        for inp in &node.inputs {
            if last_use[inp.0] == id {
                values[inp.0] = None;
            }
        }
        values[id] = Some(y);
    }
    values[graph.output().0]
        .take()
        .ok_or_else(|| Error::Graph {
            node: graph.node(graph.output()).name.clone(),
            detail: "output was not produced".into(),
        })
}

/// A recorded training-mode forward pass.
#[derive(Debug)]
pub struct TrainForward<T: Float = f32> {
    pub tape: PrimitiveTape<T>,
    pub logits: Var,
    param_vars: Vec<Option<Var>>,
}

impl<T: Float> TrainForward<T> {
    /// Tape variable holding parameter `id`, if the forward pass used it as a trainable leaf.
    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.param_vars.get(id.0).copied().flatten()
    }

    pub fn logits(&self) -> &Tensor<T> {
        self.tape.value(self.logits)
    }

    /// Appends the mean cross-entropy loss, runs backward, and stores each
    /// trainable parameter's gradient in its tensor's gradient slot.
    /// Returns the loss value.
    pub fn backward(mut self, labels: &[usize], weights: &mut Weights<T>) -> Result<T> {
        let loss = self.tape.softmax_cross_entropy(self.logits, labels)?;
        let value = self.tape.value(loss).data()[0];
        let mut grads = self.tape.backward(loss, T::one())?;
        for (i, var) in self.param_vars.iter().enumerate() {
            if let Some(var) = var {
                let g = grads
                    .take(*var)
                    .ok_or_else(|| Error::Graph {
                        node: weights.name(ParamId(i)).to_string(),
                        detail: "no gradient was produced for a trainable parameter".into(),
                    })?;
                weights.get_mut(ParamId(i)).set_grad(g.into_data())?;
            }
        }
        Ok(value)
    }
}

/// Training-mode forward pass: batch statistics are used for normalization
/// and folded into the running statistics held in `weights`.
pub fn forward_train<T: Float>(graph: &ModelGraph, weights: &mut Weights<T>, x: &Tensor<T>) -> Result<TrainForward<T>> {
    check_input(graph, x)?;
    check_weights(graph, weights)?;
    let eps = eps::<T>(graph);
    let momentum = T::from_f64_lossy(graph.config().batch_norm.momentum as f64);
    let mut tape = PrimitiveTape::new();
    let mut param_vars: Vec<Option<Var>> = vec![None; weights.len()];
    let mut vars: Vec<Var> = Vec::with_capacity(graph.nodes().len());

    let mut leaf = |tape: &mut PrimitiveTape<T>, weights: &Weights<T>, id: ParamId| -> Var {
        *param_vars[id.0].get_or_insert_with(|| tape.leaf(weights.get(id).clone(), true))
    };

    for node in graph.nodes() {
        let inp = |k: usize| vars[node.inputs[k].0];
        let v = match &node.kind {
            NodeKind::Input => tape.leaf(x.clone(), false),
            NodeKind::Conv {
                stride, pad, weight, ..
            } => {
                let w = leaf(&mut tape, weights, *weight);
                tape.conv2d(inp(0), w, *stride, *pad)?
            }
            NodeKind::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
                ..
            } => {
                let g = leaf(&mut tape, weights, *gamma);
                let b = leaf(&mut tape, weights, *beta);
                let (y, stats) = tape.batchnorm2d(inp(0), g, b, eps)?;
                let mut rv = weights.get(*running_var).data().to_vec();
                stats.update_running(weights.get_mut(*running_mean).data_mut(), &mut rv, momentum);
                weights.get_mut(*running_var).data_mut().copy_from_slice(&rv);
                y
            }
            NodeKind::Relu => tape.relu(inp(0))?,
            NodeKind::MaxPool { kernel, stride, pad } => tape.maxpool2d(inp(0), *kernel, *stride, *pad)?,
            NodeKind::AvgPool { kernel, stride } => tape.avgpool2d(inp(0), *kernel, *stride)?,
            NodeKind::GlobalAvgPool => tape.global_avgpool(inp(0))?,
            NodeKind::Concat => {
                let xs: Vec<Var> = node.inputs.iter().map(|i| vars[i.0]).collect();
                tape.concat_channels(&xs)?
            }
            NodeKind::Add => tape.add(inp(0), inp(1))?,
            NodeKind::Flatten => tape.flatten(inp(0))?,
            NodeKind::Linear { weight, bias, .. } => {
                let w = leaf(&mut tape, weights, *weight);
                let b = leaf(&mut tape, weights, *bias);
                tape.linear(inp(0), w, b)?
            }
        };
        vars.push(v);
    }
    Ok(TrainForward {
        tape,
        logits: vars[graph.output().0],
        param_vars,
    })
}
