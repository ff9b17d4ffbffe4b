//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use std::path::PathBuf;

use triplenet_core::data::{self, DatasetName, LabeledImageSet, Split};

/// Direct enumeration of the harmonic rule: odd layers read their
/// predecessor; even layer `n` reads `n - 2^i` for each `i` in `1..=5` with
/// `2^i <= n`.
pub fn harmonic_sources_bruteforce(n: usize) -> Vec<usize> {
    if n % 2 == 1 {
        return vec![n - 1];
    }
    let mut out = Vec::new();
    let mut i = 1;
    while i <= 5 {
        let x = 2usize.pow(i);
        if x <= n {
            out.push(n - x);
        }
        i += 1;
    }
    out.sort();
    out
}

/// Six nested loops over batch, output channel, output row, output column,
/// input channel and kernel offsets, accumulated in f64.
#[allow(clippy::too_many_arguments)]
pub fn conv_direct(
    x: &[f32],
    [b, cin, h, w]: [usize; 4],
    wt: &[f32],
    [cout, _, k, _]: [usize; 4],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 4]) {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut y = vec![0f64; b * cout * ho * wo];
    for n in 0..b {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0f64;
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((n * cin + ci) * h + iy as usize) * w + ix as usize] as f64;
                                let wv = wt[((co * cin + ci) * k + ky) * k + kx] as f64;
                                acc += xv * wv;
                            }
                        }
                    }
                    y[((n * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    (y, [b, cout, ho, wo])
}

/// `max |a - ref| / max |ref|`.
pub fn normwise_rel_error(a: &[f32], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    a.iter()
        .zip(reference)
        .map(|(x, r)| (*x as f64 - r).abs())
        .fold(0f64, f64::max)
        / scale
}

/// Directory from the data environment variable, if it is set.
pub fn data_dir() -> Option<PathBuf> {
    std::env::var_os("TRIPLENET_DATA_DIR").map(PathBuf::from)
}

/// The real CIFAR-10 training split if available, else a synthetic stand-in
/// with the same record layout. The flag says which one was used.
pub fn cifar_train_or_synthetic(n: usize) -> (LabeledImageSet, bool) {
    if let Some(dir) = data_dir() {
        for candidate in [dir.join("cifar10"), dir.clone()] {
            if let Ok((train, _)) = data::load_cifar10(&candidate) {
                return (train.subset(n), true);
            }
        }
    }
    (
        data::synthetic(DatasetName::Cifar10, Split::Train, n, 2024).expect("synthetic set"),
        false,
    )
}
