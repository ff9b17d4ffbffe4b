//! TripleNet model graphs: construction, shape checking, weights and execution.

mod builder;
pub mod checkpoint;
mod config;
mod exec;
mod node;
mod weights;

pub use builder::build;
pub use config::{BatchNormConfig, BottleneckWidth, ModelConfig, TransitionPool, Variant};
pub use exec::{forward_eval, forward_train, TrainForward};
pub use node::{
    NodeId, NodeKind, NodeSpec, ParamId, ParamInit, ParamRole, ParamSpec, Stage, StageKind, UnitInfo,
    UnitKind,
};
pub use weights::Weights;

use crate::error::{Error, Result};
use crate::kernels::{conv_output_extent, pool_output_extent};

/// Immutable, topologically ordered model DAG.
#[derive(Clone, Debug)]
pub struct ModelGraph {
    config: ModelConfig,
    nodes: Vec<NodeSpec>,
    params: Vec<ParamSpec>,
    stages: Vec<Stage>,
    units: Vec<UnitInfo>,
    output: NodeId,
}

impl ModelGraph {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &NodeSpec {
        &self.nodes[id.0]
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn param(&self, id: ParamId) -> &ParamSpec {
        &self.params[id.0]
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn units(&self) -> &[UnitInfo] {
        &self.units
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    /// Trainable scalar count declared by the parameter specs.
    pub fn declared_trainable_params(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.role == ParamRole::Trainable)
            .map(ParamSpec::numel)
            .sum()
    }

    /// Spatial extent a stage hands on: its last node with a spatial shape.
    pub fn stage_spatial(&self, stage: &Stage) -> Option<usize> {
        stage
            .nodes
            .iter()
            .rev()
            .find_map(|&id| match self.node(id).out_shape.as_slice() {
                [_, h, _] => Some(*h),
                _ => None,
            })
    }

    /// Spatial extents after the stem, each of the five blocks, and the classifier pool.
    pub fn stage_sizes(&self) -> Vec<usize> {
        self.stages
            .iter()
            .filter(|s| matches!(s.kind, StageKind::Stem | StageKind::Block { .. } | StageKind::Classifier))
            .filter_map(|s| self.stage_spatial(s))
            .collect()
    }

    /// Width of the feature map entering the classifier.
    pub fn feature_channels(&self) -> usize {
        match self.node(self.output).kind {
            NodeKind::Linear { in_features, .. } => in_features,
            _ => 0,
        }
    }

    /// For each node, the index of its last consumer (or itself if unused).
    pub fn last_use(&self) -> Vec<usize> {
        let mut last: Vec<usize> = (0..self.nodes.len()).collect();
        for n in &self.nodes {
            for i in &n.inputs {
                last[i.0] = last[i.0].max(n.id.0);
            }
        }
        last
    }

    /// Structural checks: ids match positions, edges point backwards, and
    /// every parameter-bearing node lies on a path from the input to the output.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Graph {
                node: "<empty>".into(),
                detail: "graph has no nodes".into(),
            });
        }
        for (i, n) in self.nodes.iter().enumerate() {
            let fail = |detail: String| Error::Graph {
                node: n.name.clone(),
                detail,
            };
            if n.id.0 != i {
                return Err(fail(format!("id {} stored at position {i}", n.id.0)));
            }
            if let Some(bad) = n.inputs.iter().find(|inp| inp.0 >= i) {
                return Err(fail(format!("input {} does not precede the node", bad.0)));
            }
            if matches!(n.kind, NodeKind::Input) != n.inputs.is_empty() {
                return Err(fail("only the input node may have no inputs".into()));
            }
        }
        let mut from_input = vec![false; self.nodes.len()];
        for n in &self.nodes {
            from_input[n.id.0] = matches!(n.kind, NodeKind::Input) || n.inputs.iter().any(|i| from_input[i.0]);
        }
        let mut to_output = vec![false; self.nodes.len()];
        to_output[self.output.0] = true;
        for n in self.nodes.iter().rev() {
            if to_output[n.id.0] {
                for i in &n.inputs {
                    to_output[i.0] = true;
                }
            }
        }
        for n in &self.nodes {
            if !n.kind.param_ids().is_empty() && !(from_input[n.id.0] && to_output[n.id.0]) {
                return Err(Error::Graph {
                    node: n.name.clone(),
                    detail: "parameter-bearing node is not on an input-to-output path".into(),
                });
            }
        }
        Ok(())
    }
}

/// Re-derives every node's output shape (with batch axis) from node kinds and
/// input shapes, and checks it against the declared metadata.
pub fn dry_run_shapes(graph: &ModelGraph, batch: usize) -> Result<Vec<Vec<usize>>> {
    graph.validate()?;
    let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(graph.nodes.len());
    for n in &graph.nodes {
        let fail = |detail: String| Error::Graph {
            node: n.name.clone(),
            detail,
        };
        let ins: Vec<&Vec<usize>> = n.inputs.iter().map(|i| &shapes[i.0]).collect();
        let spatial = |s: &Vec<usize>| -> Result<(usize, usize, usize)> {
            match s.as_slice() {
                &[_, c, h, w] => Ok((c, h, w)),
                other => Err(fail(format!("expected a feature map input, got {other:?}"))),
            }
        };
        let shape = match &n.kind {
            NodeKind::Input => {
                let s = graph.config.input_size;
                vec![batch, 3, s, s]
            }
            NodeKind::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                pad,
                weight,
            } => {
                let (c, h, w) = spatial(ins[0])?;
                if c != *in_channels {
                    return Err(fail(format!("receives {c} channels, declared {in_channels}")));
                }
                if graph.param(*weight).shape != [*out_channels, *in_channels, *kernel, *kernel] {
                    return Err(fail("weight shape disagrees with conv attributes".into()));
                }
                let ho = conv_output_extent(h, *kernel, *stride, *pad);
                let wo = conv_output_extent(w, *kernel, *stride, *pad);
                match (ho, wo) {
                    (Some(ho), Some(wo)) => vec![batch, *out_channels, ho, wo],
                    _ => return Err(fail("kernel does not fit input".into())),
                }
            }
            NodeKind::BatchNorm { channels, .. } => {
                let (c, _, _) = spatial(ins[0])?;
                if c != *channels {
                    return Err(fail(format!("receives {c} channels, declared {channels}")));
                }
                ins[0].clone()
            }
            NodeKind::Relu => ins[0].clone(),
            NodeKind::MaxPool { kernel, stride, pad } => {
                let (c, h, w) = spatial(ins[0])?;
                match (
                    pool_output_extent(h, *kernel, *stride, *pad),
                    pool_output_extent(w, *kernel, *stride, *pad),
                ) {
                    (Some(ho), Some(wo)) => vec![batch, c, ho, wo],
                    _ => return Err(fail("pool window does not fit input".into())),
                }
            }
            NodeKind::AvgPool { kernel, stride } => {
                let (c, h, w) = spatial(ins[0])?;
                match (
                    pool_output_extent(h, *kernel, *stride, 0),
                    pool_output_extent(w, *kernel, *stride, 0),
                ) {
                    (Some(ho), Some(wo)) => vec![batch, c, ho, wo],
                    _ => return Err(fail("pool window does not fit input".into())),
                }
            }
            NodeKind::GlobalAvgPool => {
                let (c, _, _) = spatial(ins[0])?;
                vec![batch, c, 1, 1]
            }
            NodeKind::Concat => {
                let (_, h, w) = spatial(ins[0])?;
                let mut total = 0;
                for s in &ins {
                    let (c, sh, sw) = spatial(s)?;
                    if (sh, sw) != (h, w) {
                        return Err(fail(format!("concat inputs disagree spatially: {s:?}")));
                    }
                    total += c;
                }
                vec![batch, total, h, w]
            }
            NodeKind::Add => {
                if ins.len() != 2 || ins[0] != ins[1] {
                    return Err(fail(format!("add operands differ: {ins:?}")));
                }
                ins[0].clone()
            }
            NodeKind::Flatten => vec![batch, ins[0][1..].iter().product()],
            NodeKind::Linear {
                in_features,
                out_features,
                ..
            } => {
                if ins[0].as_slice() != [batch, *in_features] {
                    return Err(fail(format!("expects [{batch}, {in_features}], got {:?}", ins[0])));
                }
                vec![batch, *out_features]
            }
        };
        let mut declared = vec![batch];
        declared.extend_from_slice(&n.out_shape);
        if shape != declared {
            return Err(fail(format!("inferred shape {shape:?} but metadata declares {declared:?}")));
        }
        shapes.push(shape);
    }
    Ok(shapes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_graph_rejected() {
        let g = ModelGraph {
            config: ModelConfig::new(Variant::S),
            nodes: Vec::new(),
            params: Vec::new(),
            stages: Vec::new(),
            units: Vec::new(),
            output: NodeId(0),
        };
        assert!(matches!(dry_run_shapes(&g, 1), Err(Error::Graph { .. })));
    }

    #[test]
    fn corrupted_metadata_is_named() {
        let mut g = build(&ModelConfig::new(Variant::S).with_input_size(32)).unwrap();
        let idx = g.nodes.iter().position(|n| n.name == "block2.unit4.conv").unwrap();
        g.nodes[idx].out_shape[0] += 1;
        let err = dry_run_shapes(&g, 2).unwrap_err().to_string();
        assert!(err.contains("block2.unit4"), "{err}");
    }

    #[test]
    fn depth_zero_rejected() {
        let mut cfg = ModelConfig::new(Variant::S);
        cfg.block_depths[2] = 0;
        assert!(build(&cfg).is_err());
    }
}
