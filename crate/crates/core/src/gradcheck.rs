//! Finite-difference verification of the backward pass in 64-bit precision.
//!
//! A function of some leaf tensors is reduced to a scalar by projecting its
//! output onto a fixed random tensor `r`. The analytic gradient comes from
//! [`PrimitiveTape::backward_from`] seeded with `r`; the numerical one from
//! central differences `(f(x + h) - f(x - h)) / 2h` on every leaf element.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{PrimitiveTape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_INSTANCES: usize = 5;
/// Gradients smaller than this are compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Primitive {
    Conv2d,
    BatchNorm2d,
    Relu,
    MaxPool2d,
    AvgPool2d,
    GlobalAvgPool,
    Concat,
    Add,
    Linear,
    SoftmaxCrossEntropy,
}

impl Primitive {
    pub const ALL: [Primitive; 10] = [
        Primitive::Conv2d,
        Primitive::BatchNorm2d,
        Primitive::Relu,
        Primitive::MaxPool2d,
        Primitive::AvgPool2d,
        Primitive::GlobalAvgPool,
        Primitive::Concat,
        Primitive::Add,
        Primitive::Linear,
        Primitive::SoftmaxCrossEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Conv2d => "conv2d",
            Primitive::BatchNorm2d => "batchnorm2d",
            Primitive::Relu => "relu",
            Primitive::MaxPool2d => "maxpool2d",
            Primitive::AvgPool2d => "avgpool2d",
            Primitive::GlobalAvgPool => "global_avgpool",
            Primitive::Concat => "concat_channels",
            Primitive::Add => "add",
            Primitive::Linear => "linear",
            Primitive::SoftmaxCrossEntropy => "softmax_cross_entropy",
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Primitive {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Primitive::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown primitive `{s}`")))
    }
}

/// Comparison of analytic and numerical gradients for one function.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Comparison {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub elements: usize,
}

/// Relative error with a floor on the denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// A differentiable function of leaf tensors, recorded on a fresh tape.
pub type TapeFn<'a> = dyn Fn(&mut PrimitiveTape<f64>, &[Var]) -> Result<Var> + 'a;

fn project(f: &TapeFn<'_>, leaves: &[Tensor<f64>], r: Option<&Tensor<f64>>) -> Result<(f64, Tensor<f64>)> {
    let mut tape = PrimitiveTape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let y = tape.value(out).clone();
    let value = match r {
        Some(r) => y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum(),
        None => 0.0,
    };
    Ok((value, y))
}

/// Checks the gradient of `f` with respect to every element of every leaf.
/// `corrupt` scales the analytic gradients, as a negative control.
pub fn check_function(
    f: &TapeFn<'_>,
    leaves: &[Tensor<f64>],
    seed: u64,
    h: f64,
    corrupt: Option<f64>,
) -> Result<Comparison> {
    let (_, y) = project(f, leaves, None)?;
    let r = Tensor::<f64>::uniform(y.shape(), -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))?;

    let mut tape = PrimitiveTape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let mut grads = tape.backward_from(out, r.clone())?;

    let mut cmp = Comparison {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        elements: 0,
    };
    for (li, var) in vars.iter().enumerate() {
        let analytic = grads
            .take(*var)
            .ok_or_else(|| Error::Config("leaf received no gradient".into()))?;
        let mut probe = leaves.to_vec();
        for e in 0..leaves[li].len() {
            let orig = leaves[li].data()[e];
            probe[li].data_mut()[e] = orig + h;
            let (plus, _) = project(f, &probe, Some(&r))?;
            probe[li].data_mut()[e] = orig - h;
            let (minus, _) = project(f, &probe, Some(&r))?;
            probe[li].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[e] * corrupt.unwrap_or(1.0);
            cmp.max_rel_error = cmp.max_rel_error.max(relative_error(a, numeric));
            cmp.max_abs_error = cmp.max_abs_error.max((a - numeric).abs());
            cmp.elements += 1;
        }
    }
    Ok(cmp)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrimitiveReport {
    pub primitive: Primitive,
    pub instances: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub instances: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Primitive whose analytic gradient is deliberately corrupted.
    pub fault: Option<Primitive>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: DEFAULT_INSTANCES,
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            fault: None,
        }
    }
}

/// Values in `[-1, 1]` kept at least `gap` away from zero.
fn away_from_zero(shape: &[usize], gap: f64, rng: &mut ChaCha8Rng) -> Result<Tensor<f64>> {
    let mut t = Tensor::<f64>::uniform(shape, gap, 1.0, rng)?;
    for v in t.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    Ok(t)
}

/// Distinct values spaced 0.05 apart, so pooling windows have clear maxima.
fn distinct(shape: &[usize], rng: &mut ChaCha8Rng) -> Result<Tensor<f64>> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * 0.05).collect();
    vals.shuffle(rng);
    Tensor::new(shape.to_vec(), vals)
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Result<Tensor<f64>> {
    Tensor::randn(shape, 1.0, rng)
}

type Instance = (Vec<Tensor<f64>>, Box<TapeFn<'static>>);

fn instance(p: Primitive, rng: &mut ChaCha8Rng) -> Result<Instance> {
    let b = rng.random_range(1..=3);
    let c = rng.random_range(1..=4);
    let side = rng.random_range(3..=6);
    Ok(match p {
        Primitive::Conv2d => {
            let k = if rng.random_bool(0.5) { 3 } else { 1 };
            let stride = rng.random_range(1..=2);
            let cout = rng.random_range(1..=4);
            let x = randn(&[b, c, side, side], rng)?;
            let w = randn(&[cout, c, k, k], rng)?;
            (
                vec![x, w],
                Box::new(move |t, v| t.conv2d(v[0], v[1], stride, k / 2)),
            )
        }
        Primitive::BatchNorm2d => {
            let b = b.max(2);
            let x = randn(&[b, c, side, side], rng)?;
            let g = Tensor::uniform(&[c], 0.5, 1.5, rng)?;
            let beta = randn(&[c], rng)?;
            (
                vec![x, g, beta],
                Box::new(|t, v| t.batchnorm2d(v[0], v[1], v[2], 1e-5).map(|(y, _)| y)),
            )
        }
        Primitive::Relu => (
            vec![away_from_zero(&[b, c, side, side], 0.01, rng)?],
            Box::new(|t, v| t.relu(v[0])),
        ),
        Primitive::MaxPool2d => {
            let (k, stride, pad) = if rng.random_bool(0.5) { (3, 2, 1) } else { (2, 2, 0) };
            (
                vec![distinct(&[b, c, side.max(4), side.max(4)], rng)?],
                Box::new(move |t, v| t.maxpool2d(v[0], k, stride, pad)),
            )
        }
        Primitive::AvgPool2d => {
            let k = rng.random_range(2..=3);
            let stride = rng.random_range(1..=2);
            (
                vec![randn(&[b, c, side.max(4), side.max(4)], rng)?],
                Box::new(move |t, v| t.avgpool2d(v[0], k, stride)),
            )
        }
        Primitive::GlobalAvgPool => (
            vec![randn(&[b, c, side, side], rng)?],
            Box::new(|t, v| t.global_avgpool(v[0])),
        ),
        Primitive::Concat => {
            let parts = rng.random_range(2..=3);
            let xs = (0..parts)
                .map(|_| {
                    let ci = rng.random_range(1..=3);
                    randn(&[b, ci, side, side], rng)
                })
                .collect::<Result<Vec<_>>>()?;
            (xs, Box::new(|t, v| t.concat_channels(v)))
        }
        Primitive::Add => (
            vec![randn(&[b, c, side, side], rng)?, randn(&[b, c, side, side], rng)?],
            Box::new(|t, v| t.add(v[0], v[1])),
        ),
        Primitive::Linear => {
            let f = rng.random_range(1..=8);
            let k = rng.random_range(1..=6);
            (
                vec![randn(&[b, f], rng)?, randn(&[f, k], rng)?, randn(&[k], rng)?],
                Box::new(|t, v| t.linear(v[0], v[1], v[2])),
            )
        }
        Primitive::SoftmaxCrossEntropy => {
            let k = rng.random_range(2..=10);
            let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
            (
                vec![Tensor::randn(&[b, k], 2.0, rng)?],
                Box::new(move |t, v| t.softmax_cross_entropy(v[0], &labels)),
            )
        }
    })
}

/// Checks one primitive on `config.instances` seeded random instances.
pub fn check_primitive(p: Primitive, config: &GradcheckConfig) -> Result<PrimitiveReport> {
    let salt = Primitive::ALL.iter().position(|&q| q == p).unwrap_or(0) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(1_000_003).wrapping_add(salt));
    let corrupt = (config.fault == Some(p)).then_some(1.1);
    let mut worst = 0.0f64;
    for i in 0..config.instances {
        let (leaves, f) = instance(p, &mut rng)?;
        let cmp = check_function(f.as_ref(), &leaves, config.seed ^ (i as u64 + 1), config.step, corrupt)?;
        worst = worst.max(cmp.max_rel_error);
    }
    Ok(PrimitiveReport {
        primitive: p,
        instances: config.instances,
        max_rel_error: worst,
        passed: worst < config.tolerance,
    })
}

/// Runs every primitive's check.
pub fn run(config: &GradcheckConfig) -> Result<Vec<PrimitiveReport>> {
    Primitive::ALL.iter().map(|&p| check_primitive(p, config)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitive_names_parse() {
        for p in Primitive::ALL {
            assert_eq!(p.name().parse::<Primitive>().unwrap(), p);
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(relative_error(1e-9, 0.0) < 1e-4);
    }
}
