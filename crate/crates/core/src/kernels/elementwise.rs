use super::{gemm, MatRef};
use crate::error::{shape_err, Result};
use crate::parallel::for_each_span_mut;
use crate::tensor::{Float, Tensor};

pub fn relu<T: Float>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut out = x.data().to_vec();
    for_each_span_mut(&mut out, |_, span| {
        for v in span {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
    });
    Tensor::new(x.shape().to_vec(), out)
}

/// Passes `dy` where the forward input was positive.
pub fn relu_backward<T: Float>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != dy.shape() {
        return Err(shape_err("relu_backward", format!("{:?} vs {:?}", x.shape(), dy.shape())));
    }
    let xd = x.data();
    let mut dx = dy.data().to_vec();
    for_each_span_mut(&mut dx, |off, span| {
        for (i, g) in span.iter_mut().enumerate() {
            if xd[off + i] <= T::zero() {
                *g = T::zero();
            }
        }
    });
    Tensor::new(x.shape().to_vec(), dx)
}

pub fn add<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(shape_err("add", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let bd = b.data();
    let mut out = a.data().to_vec();
    for_each_span_mut(&mut out, |off, span| {
        for (i, v) in span.iter_mut().enumerate() {
            *v += bd[off + i];
        }
    });
    Tensor::new(a.shape().to_vec(), out)
}

/// Concatenates rank-4 tensors along the channel axis.
pub fn concat_channels<T: Float>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| shape_err("concat_channels", "no inputs"))?
        .dims4("concat_channels")?;
    let [b, _, h, w] = first;
    let mut channels = Vec::with_capacity(xs.len());
    for x in xs {
        let [xb, xc, xh, xw] = x.dims4("concat_channels")?;
        if (xb, xh, xw) != (b, h, w) {
            return Err(shape_err(
                "concat_channels",
                format!("input {:?} disagrees with {first:?} on batch or spatial extent", x.shape()),
            ));
        }
        channels.push(xc);
    }
    let total: usize = channels.iter().sum();
    let plane = h * w;
    let mut out = Vec::with_capacity(b * total * plane);
    for s in 0..b {
        for (x, &c) in xs.iter().zip(&channels) {
            out.extend_from_slice(&x.data()[s * c * plane..][..c * plane]);
        }
    }
    Tensor::new(vec![b, total, h, w], out)
}

/// Inverse of [`concat_channels`]: slices `x` back into pieces of the given channel counts.
pub fn split_channels<T: Float>(x: &Tensor<T>, channels: &[usize]) -> Result<Vec<Tensor<T>>> {
    let [b, c, h, w] = x.dims4("split_channels")?;
    if channels.iter().sum::<usize>() != c {
        return Err(shape_err(
            "split_channels",
            format!("pieces {channels:?} do not sum to {c} channels"),
        ));
    }
    let plane = h * w;
    let xd = x.data();
    let mut pieces = Vec::with_capacity(channels.len());
    let mut offset = 0;
    for &pc in channels {
        let mut data = Vec::with_capacity(b * pc * plane);
        for s in 0..b {
            data.extend_from_slice(&xd[(s * c + offset) * plane..][..pc * plane]);
        }
        pieces.push(Tensor::new(vec![b, pc, h, w], data)?);
        offset += pc;
    }
    Ok(pieces)
}

/// `x [B,F] * w [F,K] + bias [K]`.
pub fn linear<T: Float>(x: &Tensor<T>, w: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, f] = x.dims2("linear")?;
    let [wf, k] = w.dims2("linear")?;
    if wf != f || bias.len() != k {
        return Err(shape_err(
            "linear",
            format!("input {:?}, weight {:?}, bias {:?}", x.shape(), w.shape(), bias.shape()),
        ));
    }
    let mut out: Vec<T> = (0..b).flat_map(|_| bias.data().iter().copied()).collect();
    gemm(
        MatRef::row_major(x.data(), b, f),
        MatRef::row_major(w.data(), f, k),
        T::one(),
        &mut out,
    );
    Tensor::new(vec![b, k], out)
}

/// Returns `(dx, dw, dbias)`.
pub fn linear_backward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [b, f] = x.dims2("linear_backward")?;
    let [_, k] = w.dims2("linear_backward")?;
    if dy.shape() != [b, k] {
        return Err(shape_err("linear_backward", format!("upstream gradient {:?}", dy.shape())));
    }
    let mut dx = vec![T::zero(); b * f];
    gemm(
        MatRef::row_major(dy.data(), b, k),
        MatRef::transposed(w.data(), f, k),
        T::zero(),
        &mut dx,
    );
    let mut dw = vec![T::zero(); f * k];
    gemm(
        MatRef::transposed(x.data(), b, f),
        MatRef::row_major(dy.data(), b, k),
        T::zero(),
        &mut dw,
    );
    let mut db = vec![T::zero(); k];
    for row in dy.data().chunks(k) {
        for (acc, &g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }
    Ok((
        Tensor::new(vec![b, f], dx)?,
        Tensor::new(vec![f, k], dw)?,
        Tensor::new(vec![k], db)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::<f32>::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).unwrap().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn concat_sums_channels_and_splits_back() {
        let a = Tensor::<f32>::full(&[1, 3, 4, 4], 1.0).unwrap();
        let b = Tensor::<f32>::full(&[1, 5, 4, 4], 2.0).unwrap();
        let c = Tensor::<f32>::full(&[1, 2, 4, 4], 3.0).unwrap();
        let y = concat_channels(&[&a, &b, &c]).unwrap();
        assert_eq!(y.shape(), &[1, 10, 4, 4]);
        let parts = split_channels(&y, &[3, 5, 2]).unwrap();
        assert_eq!(parts, vec![a, b, c]);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::<f32>::zeros(&[1, 1, 4, 4]).unwrap();
        let b = Tensor::<f32>::zeros(&[1, 1, 2, 2]).unwrap();
        assert!(concat_channels(&[&a, &b]).is_err());
    }

    #[test]
    fn add_rejects_shape_mismatch() {
        let a = Tensor::<f32>::zeros(&[1, 2, 2, 2]).unwrap();
        let b = Tensor::<f32>::zeros(&[1, 1, 2, 2]).unwrap();
        assert!(add(&a, &b).is_err());
    }

    #[test]
    fn linear_adds_bias() {
        let x = Tensor::<f64>::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::<f64>::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::<f64>::new(vec![2], vec![0.5, -0.5]).unwrap();
        assert_eq!(linear(&x, &w, &b).unwrap().data(), &[1.5, 1.5]);
    }
}
