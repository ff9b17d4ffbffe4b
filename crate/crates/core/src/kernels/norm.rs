use crate::error::{shape_err, Result};
use crate::tensor::{Float, Tensor};

/// Per-channel batch statistics: mean and biased variance over `B*H*W`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Number of values reduced per channel.
    pub count: usize,
}

impl<T: Float> BatchStats<T> {
    /// Exponential moving-average update of running statistics. The running
    /// variance tracks the unbiased estimate.
    pub fn update_running(&self, running_mean: &mut [T], running_var: &mut [T], momentum: T) {
        let n = T::from_usize(self.count).unwrap_or_else(T::one);
        let correction = if self.count > 1 { n / (n - T::one()) } else { T::one() };
        let keep = T::one() - momentum;
        for c in 0..self.mean.len() {
            running_mean[c] = keep * running_mean[c] + momentum * self.mean[c];
            running_var[c] = keep * running_var[c] + momentum * self.var[c] * correction;
        }
    }
}

/// Values saved by the training-mode forward for the backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    shape: [usize; 4],
}

fn check_affine<T: Float>(x: &Tensor<T>, gamma: &[T], beta: &[T]) -> Result<[usize; 4]> {
    let dims = x.dims4("batchnorm2d")?;
    if gamma.len() != dims[1] || beta.len() != dims[1] {
        return Err(shape_err(
            "batchnorm2d",
            format!(
                "input {:?} has {} channels, gamma/beta have {}/{}",
                x.shape(),
                dims[1],
                gamma.len(),
                beta.len()
            ),
        ));
    }
    Ok(dims)
}

/// Training-mode batch normalization using batch statistics.
pub fn batchnorm2d_train<T: Float>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> Result<(Tensor<T>, BatchStats<T>, BatchNormCache<T>)> {
    let [b, c, h, w] = check_affine(x, gamma, beta)?;
    let plane = h * w;
    let count = b * plane;
    let n = T::from_usize(count).unwrap_or_else(T::one);
    let xd = x.data();

    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut sum = T::zero();
        for s in 0..b {
            sum += xd[(s * c + ch) * plane..][..plane].iter().copied().sum::<T>();
        }
        let m = sum / n;
        let mut sq = T::zero();
        for s in 0..b {
            for &v in &xd[(s * c + ch) * plane..][..plane] {
                let d = v - m;
                sq += d * d;
            }
        }
        mean[ch] = m;
        var[ch] = sq / n;
    }

    let inv_std: Vec<T> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut out = vec![T::zero(); xd.len()];
    for s in 0..b {
        for ch in 0..c {
            let base = (s * c + ch) * plane;
            for i in base..base + plane {
                let z = (xd[i] - mean[ch]) * inv_std[ch];
                xhat[i] = z;
                out[i] = gamma[ch] * z + beta[ch];
            }
        }
    }

    let stats = BatchStats { mean, var, count };
    let cache = BatchNormCache {
        xhat,
        inv_std,
        shape: [b, c, h, w],
    };
    Ok((Tensor::new(x.shape().to_vec(), out)?, stats, cache))
}

/// Inference-mode batch normalization using running statistics.
pub fn batchnorm2d_eval<T: Float>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: T,
) -> Result<Tensor<T>> {
    let [b, c, h, w] = check_affine(x, gamma, beta)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(shape_err("batchnorm2d", "running statistics length differs from channel count"));
    }
    let plane = h * w;
    let scale: Vec<T> = (0..c)
        .map(|ch| gamma[ch] / (running_var[ch] + eps).sqrt())
        .collect();
    let shift: Vec<T> = (0..c)
        .map(|ch| beta[ch] - running_mean[ch] * scale[ch])
        .collect();
    let mut out = x.data().to_vec();
    for s in 0..b {
        for ch in 0..c {
            for v in &mut out[(s * c + ch) * plane..][..plane] {
                *v = *v * scale[ch] + shift[ch];
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Returns `(dx, dgamma, dbeta)` for the training-mode forward.
pub fn batchnorm2d_backward<T: Float>(
    dy: &Tensor<T>,
    cache: &BatchNormCache<T>,
    gamma: &[T],
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let [b, c, h, w] = cache.shape;
    if dy.shape() != cache.shape {
        return Err(shape_err(
            "batchnorm2d_backward",
            format!("upstream gradient {:?} does not match {:?}", dy.shape(), cache.shape),
        ));
    }
    let plane = h * w;
    let n = T::from_usize(b * plane).unwrap_or_else(T::one);
    let dyd = dy.data();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for s in 0..b {
        for ch in 0..c {
            let base = (s * c + ch) * plane;
            for (&g, &xh) in dyd[base..base + plane].iter().zip(&cache.xhat[base..base + plane]) {
                dbeta[ch] += g;
                dgamma[ch] += g * xh;
            }
        }
    }
    let mut dx = vec![T::zero(); dyd.len()];
    for s in 0..b {
        for ch in 0..c {
            let k = gamma[ch] * cache.inv_std[ch] / n;
            let base = (s * c + ch) * plane;
            for i in base..base + plane {
                dx[i] = k * (n * dyd[i] - dbeta[ch] - cache.xhat[i] * dgamma[ch]);
            }
        }
    }
    Ok((Tensor::new(dy.shape().to_vec(), dx)?, dgamma, dbeta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f32>::randn(&[4, 3, 5, 5], 2.5, &mut rng).unwrap();
        let (y, stats, _) = batchnorm2d_train(&x, &[1.0; 3], &[0.0; 3], 1e-5).unwrap();
        assert_eq!(stats.count, 100);
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|s| y.data()[(s * 3 + ch) * 25..][..25].iter().map(|&v| v as f64))
                .collect();
            let mean = vals.iter().sum::<f64>() / 100.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 100.0;
            assert!(mean.abs() < 1e-5, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn constant_input_yields_shift() {
        let x = Tensor::<f32>::full(&[2, 2, 3, 3], 7.0).unwrap();
        let (y, stats, _) = batchnorm2d_train(&x, &[1.0; 2], &[5.0; 2], 1e-5).unwrap();
        assert!(y.all_finite());
        assert!(y.data().iter().all(|&v| v == 5.0));
        assert_eq!(stats.var, vec![0.0, 0.0]);
    }

    #[test]
    fn running_stats_follow_momentum() {
        let stats = BatchStats {
            mean: vec![2.0f64],
            var: vec![3.0],
            count: 4,
        };
        let (mut m, mut v) = (vec![0.0], vec![1.0]);
        stats.update_running(&mut m, &mut v, 0.1);
        assert!((m[0] - 0.2).abs() < 1e-12);
        assert!((v[0] - (0.9 + 0.1 * 4.0)).abs() < 1e-12);
    }

    #[test]
    fn eval_uses_running_stats() {
        let x = Tensor::<f64>::full(&[1, 1, 1, 2], 3.0).unwrap();
        let y = batchnorm2d_eval(&x, &[2.0], &[1.0], &[1.0], &[4.0], 0.0).unwrap();
        // (3 - 1) / sqrt(4) * 2 + 1
        assert_eq!(y.data(), &[3.0, 3.0]);
    }

    #[test]
    fn rejects_wrong_affine_length() {
        let x = Tensor::<f32>::zeros(&[1, 3, 2, 2]).unwrap();
        assert!(batchnorm2d_train(&x, &[1.0; 2], &[0.0; 3], 1e-5).is_err());
    }
}
