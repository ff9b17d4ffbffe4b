use crate::error::{arg_err, Result};
use crate::tensor::{Float, Tensor};

/// Row-wise softmax of `[B,K]` logits, stabilized by max subtraction.
pub fn softmax_rows<T: Float>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, k] = logits.dims2("softmax")?;
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Mean negative log-likelihood of `labels` under the softmax of `logits`.
/// Returns the loss and the probabilities needed for the backward pass.
pub fn softmax_cross_entropy<T: Float>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let [b, k] = logits.dims2("softmax_cross_entropy")?;
    if labels.len() != b {
        return Err(arg_err(
            "softmax_cross_entropy",
            format!("{} labels for a batch of {b}", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(arg_err("softmax_cross_entropy", format!("label {bad} outside [0, {k})")));
    }
    let mut loss = T::zero();
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        loss += lse - row[label];
    }
    let n = T::from_usize(b).unwrap_or_else(T::one);
    Ok((loss / n, softmax_rows(logits)?))
}

/// `upstream * (softmax - onehot) / B`.
pub fn softmax_cross_entropy_backward<T: Float>(probs: &Tensor<T>, labels: &[usize], upstream: T) -> Result<Tensor<T>> {
    let [b, k] = probs.dims2("softmax_cross_entropy_backward")?;
    let scale = upstream / T::from_usize(b).unwrap_or_else(T::one);
    let mut grad = probs.data().to_vec();
    for (row, &label) in grad.chunks_mut(k).zip(labels) {
        row[label] -= T::one();
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    Tensor::new(probs.shape().to_vec(), grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Tensor::<f64>::full(&[3, 10], 0.7).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 4, 9]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn huge_margin_saturates() {
        let mut data = vec![0.0f32; 10];
        data[3] = 1000.0;
        let logits = Tensor::new(vec![1, 10], data).unwrap();
        let (loss, probs) = softmax_cross_entropy(&logits, &[3]).unwrap();
        assert!(loss.abs() < 1e-6);
        assert!(probs.all_finite());
    }

    #[test]
    fn out_of_range_label_rejected() {
        let logits = Tensor::<f32>::zeros(&[2, 10]).unwrap();
        assert!(softmax_cross_entropy(&logits, &[1, 10]).is_err());
        assert!(softmax_cross_entropy(&logits, &[1]).is_err());
    }
}
