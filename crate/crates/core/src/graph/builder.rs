//! Assembles the TripleNet DAG: stem, five blocks built from the three unit
//! kinds, transition layers between them, and the classifier head.
//!
//! Output shapes recorded here come from the builder's own stage arithmetic;
//! [`super::dry_run_shapes`] re-derives them from the node kinds alone.

use super::config::{ModelConfig, TransitionPool};
use super::node::*;
use super::ModelGraph;
use crate::connectivity::{self, Scheme};
use crate::error::Result;

struct Builder<'a> {
    cfg: &'a ModelConfig,
    nodes: Vec<NodeSpec>,
    params: Vec<ParamSpec>,
    stages: Vec<Stage>,
    units: Vec<UnitInfo>,
}

/// A produced feature map: its node, channel count and square spatial extent.
#[derive(Clone, Copy, Debug)]
struct Feature {
    node: NodeId,
    channels: usize,
    size: usize,
}

impl<'a> Builder<'a> {
    fn begin_stage(&mut self, name: impl Into<String>, kind: StageKind, composition: impl Into<String>) {
        self.stages.push(Stage {
            name: name.into(),
            kind,
            composition: composition.into(),
            nodes: Vec::new(),
        });
    }

    fn param(&mut self, name: String, shape: Vec<usize>, role: ParamRole, init: ParamInit) -> ParamId {
        self.params.push(ParamSpec {
            name,
            shape,
            role,
            init,
        });
        ParamId(self.params.len() - 1)
    }

    fn node(&mut self, name: String, kind: NodeKind, inputs: Vec<NodeId>, out_shape: Vec<usize>) -> NodeId {
        let id = NodeId(self.nodes.len());
        let stage = self.stages.len().saturating_sub(1);
        self.nodes.push(NodeSpec {
            id,
            name,
            kind,
            inputs,
            out_shape,
            stage,
        });
        if let Some(s) = self.stages.last_mut() {
            s.nodes.push(id);
        }
        id
    }

    fn conv(&mut self, name: &str, x: Feature, out_channels: usize, kernel: usize, stride: usize) -> Feature {
        let fan_in = x.channels * kernel * kernel;
        let weight = self.param(
            format!("{name}.weight"),
            vec![out_channels, x.channels, kernel, kernel],
            ParamRole::Trainable,
            ParamInit::HeNormal { fan_in },
        );
        let size = x.size / stride;
        let node = self.node(
            name.to_string(),
            NodeKind::Conv {
                in_channels: x.channels,
                out_channels,
                kernel,
                stride,
                pad: kernel / 2,
                weight,
            },
            vec![x.node],
            vec![out_channels, size, size],
        );
        Feature {
            node,
            channels: out_channels,
            size,
        }
    }

    fn bn(&mut self, name: &str, x: Feature) -> Feature {
        let c = x.channels;
        let gamma = self.param(format!("{name}.gamma"), vec![c], ParamRole::Trainable, ParamInit::Ones);
        let beta = self.param(format!("{name}.beta"), vec![c], ParamRole::Trainable, ParamInit::Zeros);
        let running_mean = self.param(
            format!("{name}.running_mean"),
            vec![c],
            ParamRole::RunningMean,
            ParamInit::Zeros,
        );
        let running_var = self.param(
            format!("{name}.running_var"),
            vec![c],
            ParamRole::RunningVar,
            ParamInit::Ones,
        );
        let node = self.node(
            name.to_string(),
            NodeKind::BatchNorm {
                channels: c,
                gamma,
                beta,
                running_mean,
                running_var,
            },
            vec![x.node],
            vec![c, x.size, x.size],
        );
        Feature { node, ..x }
    }

    fn relu(&mut self, name: &str, x: Feature) -> Feature {
        let node = self.node(name.to_string(), NodeKind::Relu, vec![x.node], vec![x.channels, x.size, x.size]);
        Feature { node, ..x }
    }

    fn conv_bn_relu(&mut self, prefix: &str, x: Feature, out_channels: usize, kernel: usize, stride: usize) -> Feature {
        let y = self.conv(&format!("{prefix}.conv"), x, out_channels, kernel, stride);
        let y = self.bn(&format!("{prefix}.bn"), y);
        self.relu(&format!("{prefix}.relu"), y)
    }

    /// Channel concatenation; a single input passes through without a node.
    fn concat(&mut self, name: &str, xs: &[Feature]) -> Feature {
        if let [only] = xs {
            return *only;
        }
        let channels = xs.iter().map(|f| f.channels).sum();
        let size = xs[0].size;
        let node = self.node(
            name.to_string(),
            NodeKind::Concat,
            xs.iter().map(|f| f.node).collect(),
            vec![channels, size, size],
        );
        Feature { node, channels, size }
    }

    fn stem(&mut self, input: Feature) -> Feature {
        let c = self.cfg.stem_channels;
        self.begin_stage(
            "stem",
            StageKind::Stem,
            format!("3x3 conv s2 -> 3x3 conv s1, {c} ch"),
        );
        let x = self.conv_bn_relu("stem.layer1", input, c, 3, 2);
        let x = self.conv_bn_relu("stem.layer2", x, c, 3, 1);

        self.begin_stage("stem pool", StageKind::StemPool, "3x3 maxpool s2");
        let size = x.size / 2;
        let node = self.node(
            "stem.pool".into(),
            NodeKind::MaxPool {
                kernel: 3,
                stride: 2,
                pad: 1,
            },
            vec![x.node],
            vec![x.channels, size, size],
        );
        Feature { node, size, ..x }
    }

    fn dense_block(&mut self, block: usize, input: Feature) -> Result<Feature> {
        let depth = self.cfg.block_depths[block - 1];
        let g = self.cfg.growth_rates[block - 1];
        let mut outputs = vec![input];
        for n in 1..=depth {
            let links = connectivity::dense_links(n)?;
            let prefix = format!("block{block}.unit{n}");
            let srcs: Vec<Feature> = links.sources().iter().map(|&s| outputs[s]).collect();
            let x = self.concat(&format!("{prefix}.concat"), &srcs);
            let y = self.bn(&format!("{prefix}.bn1"), x);
            let y = self.relu(&format!("{prefix}.relu1"), y);
            let y = self.conv(&format!("{prefix}.conv1"), y, 4 * g, 1, 1);
            let y = self.bn(&format!("{prefix}.bn2"), y);
            let y = self.relu(&format!("{prefix}.relu2"), y);
            let y = self.conv(&format!("{prefix}.conv2"), y, g, 3, 1);
            self.units.push(UnitInfo {
                block,
                index: n,
                kind: UnitKind::DenseBottleneck,
                sources: links.sources().to_vec(),
                input_channels: x.channels,
                output_channels: y.channels,
            });
            outputs.push(y);
        }
        self.block_output(block, Scheme::Dense, &outputs)
    }

    fn harmonic_block(&mut self, block: usize, input: Feature) -> Result<Feature> {
        let depth = self.cfg.block_depths[block - 1];
        let g = self.cfg.growth_rates[block - 1];
        let mut outputs = vec![input];
        for n in 1..=depth {
            let links = connectivity::harmonic_links(n)?;
            let width = self.cfg.width_rule.layer_width(n, Scheme::Harmonic, g);
            let prefix = format!("block{block}.unit{n}");
            let srcs: Vec<Feature> = links.sources().iter().map(|&s| outputs[s]).collect();
            let x = self.concat(&format!("{prefix}.concat"), &srcs);
            let y = self.conv_bn_relu(&prefix, x, width, 3, 1);
            self.units.push(UnitInfo {
                block,
                index: n,
                kind: UnitKind::Harmonic,
                sources: links.sources().to_vec(),
                input_channels: x.channels,
                output_channels: width,
            });
            outputs.push(y);
        }
        self.block_output(block, Scheme::Harmonic, &outputs)
    }

    fn block_output(&mut self, block: usize, scheme: Scheme, outputs: &[Feature]) -> Result<Feature> {
        let members = connectivity::block_output_members(scheme, outputs.len() - 1)?;
        let parts: Vec<Feature> = members.iter().map(|&m| outputs[m]).collect();
        Ok(self.concat(&format!("block{block}.out"), &parts))
    }

    fn residual_block(&mut self, block: usize, input: Feature) -> Feature {
        let depth = self.cfg.block_depths[block - 1];
        let c = input.channels;
        let mid = self
            .cfg
            .bottleneck_width
            .width(c, self.cfg.growth_rates[block - 1]);
        let mut x = input;
        for n in 1..=depth {
            let p = format!("block{block}.unit{n}");
            let y = self.conv_bn_relu(&format!("{p}.reduce"), x, mid, 1, 1);
            let y = self.conv_bn_relu(&format!("{p}.spatial"), y, mid, 3, 1);
            let y = self.conv(&format!("{p}.expand.conv"), y, c, 1, 1);
            let y = self.bn(&format!("{p}.expand.bn"), y);
            let sum = self.node(
                format!("{p}.add"),
                NodeKind::Add,
                vec![x.node, y.node],
                vec![c, x.size, x.size],
            );
            let out = self.relu(&format!("{p}.relu"), Feature { node: sum, ..x });
            self.units.push(UnitInfo {
                block,
                index: n,
                kind: UnitKind::Residual,
                sources: vec![n - 1],
                input_channels: c,
                output_channels: c,
            });
            x = out;
        }
        x
    }

    fn transition(&mut self, index: usize, x: Feature, out_channels: usize, pooled: bool) -> Feature {
        let pool_desc = match (pooled, self.cfg.transition_pool) {
            (false, _) => String::new(),
            (true, TransitionPool::Average) => ", 2x2 avgpool s2".into(),
            (true, TransitionPool::Max) => ", 2x2 maxpool s2".into(),
        };
        self.begin_stage(
            format!("transition{index}"),
            StageKind::Transition { index, pooled },
            format!("1x1 conv -> {out_channels} ch{pool_desc}"),
        );
        let prefix = format!("transition{index}");
        let y = self.conv_bn_relu(&prefix, x, out_channels, 1, 1);
        if !pooled {
            return y;
        }
        let size = y.size / 2;
        let kind = match self.cfg.transition_pool {
            TransitionPool::Average => NodeKind::AvgPool { kernel: 2, stride: 2 },
            TransitionPool::Max => NodeKind::MaxPool {
                kernel: 2,
                stride: 2,
                pad: 0,
            },
        };
        let node = self.node(format!("{prefix}.pool"), kind, vec![y.node], vec![y.channels, size, size]);
        Feature { node, size, ..y }
    }

    fn classifier(&mut self, x: Feature) -> NodeId {
        let k = self.cfg.num_classes;
        self.begin_stage(
            "classifier",
            StageKind::Classifier,
            format!("global avgpool -> linear {} -> {k}", x.channels),
        );
        let gap = self.node(
            "classifier.gap".into(),
            NodeKind::GlobalAvgPool,
            vec![x.node],
            vec![x.channels, 1, 1],
        );
        let flat = self.node("classifier.flatten".into(), NodeKind::Flatten, vec![gap], vec![x.channels]);
        let weight = self.param(
            "classifier.weight".into(),
            vec![x.channels, k],
            ParamRole::Trainable,
            ParamInit::HeNormal { fan_in: x.channels },
        );
        let bias = self.param("classifier.bias".into(), vec![k], ParamRole::Trainable, ParamInit::Zeros);
        self.node(
            "classifier.linear".into(),
            NodeKind::Linear {
                in_features: x.channels,
                out_features: k,
                weight,
                bias,
            },
            vec![flat],
            vec![k],
        )
    }
}

/// Builds the full model graph for `config`.
pub fn build(config: &ModelConfig) -> Result<ModelGraph> {
    config.validate()?;
    let mut b = Builder {
        cfg: config,
        nodes: Vec::new(),
        params: Vec::new(),
        stages: Vec::new(),
        units: Vec::new(),
    };
    let s = config.input_size;
    let input = b.node("input".into(), NodeKind::Input, Vec::new(), vec![3, s, s]);
    let mut x = b.stem(Feature {
        node: input,
        channels: 3,
        size: s,
    });

    let ch = config.block_channels;
    let depths = config.block_depths;
    let g = config.growth_rates;
    for block in 1..=5 {
        b.begin_stage(
            format!("block{block}"),
            StageKind::Block { index: block },
            match block {
                1 => format!("[conv layer 1] x {}, dense, g={}", depths[0], g[0]),
                2..=4 => format!(
                    "[conv layer 2] x {}, harmonic, g={}",
                    depths[block - 1],
                    g[block - 1]
                ),
                _ => format!(
                    "[conv layer 3] x {}, residual, bottleneck {}",
                    depths[4],
                    config.bottleneck_width.width(ch[4], g[4])
                ),
            },
        );
        x = match block {
            1 => b.dense_block(1, x)?,
            2..=4 => b.harmonic_block(block, x)?,
            _ => b.residual_block(5, x),
        };
        if block < 5 {
            // The transition after block 3 keeps the spatial extent.
            x = b.transition(block, x, ch[block], block != 3);
        }
    }
    let output = b.classifier(x);

    Ok(ModelGraph {
        config: config.clone(),
        nodes: b.nodes,
        params: b.params,
        stages: b.stages,
        units: b.units,
        output,
    })
}
