use crate::connectivity::Scheme;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub enum NodeKind {
    Input,
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        weight: ParamId,
    },
    BatchNorm {
        channels: usize,
        gamma: ParamId,
        beta: ParamId,
        running_mean: ParamId,
        running_var: ParamId,
    },
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    AvgPool {
        kernel: usize,
        stride: usize,
    },
    GlobalAvgPool,
    Concat,
    Add,
    Flatten,
    Linear {
        in_features: usize,
        out_features: usize,
        weight: ParamId,
        bias: ParamId,
    },
}

impl NodeKind {
    pub fn tag(&self) -> &'static str {
        match self {
            NodeKind::Input => "input",
            NodeKind::Conv { .. } => "conv",
            NodeKind::BatchNorm { .. } => "bn",
            NodeKind::Relu => "relu",
            NodeKind::MaxPool { .. } => "maxpool",
            NodeKind::AvgPool { .. } => "avgpool",
            NodeKind::GlobalAvgPool => "gap",
            NodeKind::Concat => "concat",
            NodeKind::Add => "add",
            NodeKind::Flatten => "flatten",
            NodeKind::Linear { .. } => "linear",
        }
    }

    /// Every parameter or buffer this node reads.
    pub fn param_ids(&self) -> Vec<ParamId> {
        match *self {
            NodeKind::Conv { weight, .. } => vec![weight],
            NodeKind::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
                ..
            } => vec![gamma, beta, running_mean, running_var],
            NodeKind::Linear { weight, bias, .. } => vec![weight, bias],
            _ => Vec::new(),
        }
    }
}

/// One node of the model DAG. `out_shape` excludes the batch axis.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSpec {
    pub id: NodeId,
    pub name: String,
    pub kind: NodeKind,
    pub inputs: Vec<NodeId>,
    pub out_shape: Vec<usize>,
    pub stage: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Trainable,
    RunningMean,
    RunningVar,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamInit {
    /// Zero-mean normal with standard deviation `sqrt(2 / fan_in)`.
    HeNormal { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: ParamRole,
    pub init: ParamInit,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageKind {
    Stem,
    StemPool,
    Block { index: usize },
    Transition { index: usize, pooled: bool },
    Classifier,
}

/// A contiguous run of nodes forming one row of the architecture table.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub name: String,
    pub kind: StageKind,
    pub composition: String,
    pub nodes: Vec<NodeId>,
}

/// Which of the three conv-layer kinds a block unit is.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnitKind {
    /// BN-ReLU-1x1 conv to 4g, BN-ReLU-3x3 conv to g; dense inputs.
    DenseBottleneck,
    /// 3x3 conv-BN-ReLU; harmonic inputs.
    Harmonic,
    /// 1x1 / 3x3 / 1x1 bottleneck with identity shortcut.
    Residual,
}

impl UnitKind {
    pub fn scheme(self) -> Option<Scheme> {
        match self {
            UnitKind::DenseBottleneck => Some(Scheme::Dense),
            UnitKind::Harmonic => Some(Scheme::Harmonic),
            UnitKind::Residual => None,
        }
    }
}

/// Channel bookkeeping for one unit inside a block (both indices 1-based).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnitInfo {
    pub block: usize,
    pub index: usize,
    pub kind: UnitKind,
    pub sources: Vec<usize>,
    pub input_channels: usize,
    pub output_channels: usize,
}
