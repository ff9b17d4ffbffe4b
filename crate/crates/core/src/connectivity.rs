//! Intra-block connection schemes.
//!
//! Layers inside a block are numbered from 1; index 0 is the block input.
//! The dense scheme feeds every layer with all earlier outputs. The harmonic
//! scheme chains odd layers to their predecessor and feeds even layer `n` from
//! `n - 2^i` for `i = 1..=5` (while `2^i <= n`); those even layers are the
//! "reserved" ones whose outputs are reused later, so they are made wider.

use std::fmt;

use crate::error::{arg_err, Result};

/// Largest exponent probed by the harmonic scheme.
pub const HARMONIC_MAX_EXPONENT: u32 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    Dense,
    Harmonic,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Dense => "dense",
            Scheme::Harmonic => "harmonic",
        })
    }
}

/// Sources feeding one layer of a block, sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinkSet {
    layer_index: usize,
    sources: Vec<usize>,
}

impl LinkSet {
    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }
}

fn check_index(n: usize) -> Result<()> {
    if n == 0 {
        Err(arg_err("connectivity", "layer indices start at 1"))
    } else {
        Ok(())
    }
}

pub fn dense_links(n: usize) -> Result<LinkSet> {
    check_index(n)?;
    Ok(LinkSet {
        layer_index: n,
        sources: (0..n).collect(),
    })
}

pub fn harmonic_links(n: usize) -> Result<LinkSet> {
    check_index(n)?;
    let sources = if n % 2 == 1 {
        vec![n - 1]
    } else {
        let mut s: Vec<usize> = (1..=HARMONIC_MAX_EXPONENT)
            .map(|i| 1usize << i)
            .take_while(|&step| step <= n)
            .map(|step| n - step)
            .collect();
        s.sort_unstable();
        s
    };
    Ok(LinkSet { layer_index: n, sources })
}

pub fn links(scheme: Scheme, n: usize) -> Result<LinkSet> {
    match scheme {
        Scheme::Dense => dense_links(n),
        Scheme::Harmonic => harmonic_links(n),
    }
}

/// Width multiplier for reserved harmonic layers, as an exact fraction; the
/// product with the growth rate is floored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WidthRule {
    pub numerator: usize,
    pub denominator: usize,
}

impl Default for WidthRule {
    fn default() -> Self {
        Self {
            numerator: 17,
            denominator: 10,
        }
    }
}

impl WidthRule {
    pub fn reserved_width(&self, growth_rate: usize) -> usize {
        (growth_rate * self.numerator / self.denominator).max(1)
    }

    pub fn layer_width(&self, n: usize, scheme: Scheme, growth_rate: usize) -> usize {
        match scheme {
            Scheme::Dense => growth_rate,
            Scheme::Harmonic if n.is_multiple_of(2) => self.reserved_width(growth_rate),
            Scheme::Harmonic => growth_rate,
        }
    }
}

/// Output channels of layer `n` under the default 1.7x rule.
pub fn layer_width(n: usize, scheme: Scheme, growth_rate: usize) -> usize {
    WidthRule::default().layer_width(n, scheme, growth_rate)
}

/// Layer indices (0 = block input) concatenated to form the block output.
/// Harmonic blocks keep the input, every odd layer and the last layer. Odd
/// layers feed no later layer, so the block output is their only consumer.
pub fn block_output_members(scheme: Scheme, depth: usize) -> Result<Vec<usize>> {
    if depth == 0 {
        return Err(arg_err("block_output_members", "block depth must be at least 1"));
    }
    Ok(match scheme {
        Scheme::Dense => (0..=depth).collect(),
        Scheme::Harmonic => (0..=depth).filter(|&i| i == 0 || i % 2 == 1 || i == depth).collect(),
    })
}
