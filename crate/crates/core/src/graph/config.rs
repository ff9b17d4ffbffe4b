use std::fmt;
use std::str::FromStr;

use crate::connectivity::WidthRule;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    S,
    B,
}

impl Variant {
    /// Published parameter count for the variant, used as a diagnostic reference.
    pub fn reference_params(self) -> u64 {
        match self {
            Variant::S => 9_670_000,
            Variant::B => 12_630_000,
        }
    }

    /// Published Flops (read as multiply-accumulates) at 224x224 input.
    pub fn reference_macs(self) -> u64 {
        match self {
            Variant::S => 4_170_000_000,
            Variant::B => 4_290_000_000,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::S => "TripleNet-S",
            Variant::B => "TripleNet-B",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s" | "triplenet-s" => Ok(Variant::S),
            "b" | "triplenet-b" => Ok(Variant::B),
            other => Err(Error::Config(format!("unknown model variant `{other}` (expected s or b)"))),
        }
    }
}

/// Pooling used by the spatially reducing transition layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TransitionPool {
    Average,
    Max,
}

/// Interior width of the residual bottleneck units in the last block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BottleneckWidth {
    /// Three times the block growth rate (480 for growth rate 160).
    TripleGrowthRate,
    /// Half the block width (C/2).
    HalfChannels,
    /// The block growth rate itself.
    GrowthRate,
}

impl BottleneckWidth {
    pub const ALL: [BottleneckWidth; 3] = [
        BottleneckWidth::TripleGrowthRate,
        BottleneckWidth::HalfChannels,
        BottleneckWidth::GrowthRate,
    ];

    pub fn width(self, channels: usize, growth_rate: usize) -> usize {
        match self {
            BottleneckWidth::TripleGrowthRate => 3 * growth_rate,
            BottleneckWidth::HalfChannels => (channels / 2).max(1),
            BottleneckWidth::GrowthRate => growth_rate,
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            BottleneckWidth::TripleGrowthRate => "3 x growth rate",
            BottleneckWidth::HalfChannels => "C/2",
            BottleneckWidth::GrowthRate => "growth rate",
        }
    }
}

impl FromStr for BottleneckWidth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "triple-growth" => Ok(BottleneckWidth::TripleGrowthRate),
            "half" => Ok(BottleneckWidth::HalfChannels),
            "growth" => Ok(BottleneckWidth::GrowthRate),
            other => Err(Error::Config(format!(
                "unknown bottleneck width `{other}` (expected triple-growth, half or growth)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormConfig {
    pub eps: f32,
    pub momentum: f32,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

/// Architecture hyperparameters. `block_channels[i]` is the width entering block `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub block_depths: [usize; 5],
    pub block_channels: [usize; 5],
    pub growth_rates: [usize; 5],
    pub num_classes: usize,
    pub input_size: usize,
    pub stem_channels: usize,
    pub transition_pool: TransitionPool,
    pub bottleneck_width: BottleneckWidth,
    pub width_rule: WidthRule,
    pub batch_norm: BatchNormConfig,
}

impl ModelConfig {
    /// The published configuration at 224x224 input with 10 classes.
    pub fn new(variant: Variant) -> Self {
        let (last_depth, last_channels) = match variant {
            Variant::S => (2, 720),
            Variant::B => (3, 1080),
        };
        Self {
            variant,
            block_depths: [6, 16, 16, 16, last_depth],
            block_channels: [128, 192, 256, 320, last_channels],
            growth_rates: [32, 16, 20, 40, 160],
            num_classes: 10,
            input_size: 224,
            stem_channels: 128,
            transition_pool: TransitionPool::Average,
            bottleneck_width: BottleneckWidth::TripleGrowthRate,
            width_rule: WidthRule::default(),
            batch_norm: BatchNormConfig::default(),
        }
    }

    pub fn with_input_size(mut self, input_size: usize) -> Self {
        self.input_size = input_size;
        self
    }

    pub fn with_classes(mut self, num_classes: usize) -> Self {
        self.num_classes = num_classes;
        self
    }

    pub fn with_bottleneck_width(mut self, width: BottleneckWidth) -> Self {
        self.bottleneck_width = width;
        self
    }

    pub fn with_transition_pool(mut self, pool: TransitionPool) -> Self {
        self.transition_pool = pool;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.input_size < 32 || !self.input_size.is_multiple_of(32) {
            return bad(format!(
                "input size {} must be a positive multiple of 32 so all five halvings stay integral",
                self.input_size
            ));
        }
        if let Some(i) = self.block_depths.iter().position(|&d| d == 0) {
            return bad(format!("block {} has depth 0", i + 1));
        }
        if self.block_channels.contains(&0) || self.growth_rates.contains(&0) {
            return bad("block channels and growth rates must be positive".into());
        }
        if self.num_classes == 0 || self.stem_channels == 0 {
            return bad("class count and stem width must be positive".into());
        }
        if self.width_rule.denominator == 0 {
            return bad("width rule denominator must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_differ_only_in_last_block() {
        let s = ModelConfig::new(Variant::S);
        let b = ModelConfig::new(Variant::B);
        assert_eq!(s.block_depths[..4], b.block_depths[..4]);
        assert_eq!(s.block_channels[..4], b.block_channels[..4]);
        assert_eq!(s.growth_rates, b.growth_rates);
        assert_eq!((s.block_depths[4], b.block_depths[4]), (2, 3));
        assert_eq!((s.block_channels[4], b.block_channels[4]), (720, 1080));
    }

    #[test]
    fn input_size_must_divide_by_32() {
        assert!(ModelConfig::new(Variant::S).with_input_size(100).validate().is_err());
        assert!(ModelConfig::new(Variant::S).with_input_size(0).validate().is_err());
        assert!(ModelConfig::new(Variant::S).with_input_size(64).validate().is_ok());
    }

    #[test]
    fn parse_variant() {
        assert_eq!("s".parse::<Variant>().unwrap(), Variant::S);
        assert_eq!("B".parse::<Variant>().unwrap(), Variant::B);
        assert!("x".parse::<Variant>().is_err());
    }
}
