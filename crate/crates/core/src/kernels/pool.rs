use super::conv::conv_output_extent;
use crate::error::{arg_err, shape_err, Result};
use crate::parallel::{map_chunks_mut, task_count};
use crate::tensor::{Float, Tensor};

pub fn pool_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    conv_output_extent(input, kernel, stride, pad)
}

fn pooled_dims<T: Float>(
    op: &'static str,
    x: &Tensor<T>,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<([usize; 4], usize, usize)> {
    let dims = x.dims4(op)?;
    if kernel == 0 || stride == 0 {
        return Err(arg_err(op, "kernel and stride must be positive"));
    }
    if 2 * pad > kernel {
        return Err(arg_err(op, format!("padding {pad} exceeds half of kernel {kernel}")));
    }
    match (
        pool_output_extent(dims[2], kernel, stride, pad),
        pool_output_extent(dims[3], kernel, stride, pad),
    ) {
        (Some(ho), Some(wo)) => Ok((dims, ho, wo)),
        _ => Err(shape_err(op, format!("{kernel}x{kernel} window does not fit {:?}", x.shape()))),
    }
}

/// Splits `planes` output planes of `plane_len` elements into per-task chunks.
fn plane_chunk(planes: usize, plane_len: usize) -> usize {
    planes.div_ceil(task_count(planes)) * plane_len
}

/// Max pooling; padded cells never win. Also returns, per output element, the
/// flat index of the selected input element.
pub fn maxpool2d<T: Float>(
    x: &Tensor<T>,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let ([b, c, h, w], ho, wo) = pooled_dims("maxpool2d", x, kernel, stride, pad)?;
    let xd = x.data();
    let out_plane = ho * wo;
    let mut arg = vec![0usize; b * c * out_plane];
    let mut out = vec![T::zero(); b * c * out_plane];
    let chunk = plane_chunk(b * c, out_plane);
    map_chunks_mut(&mut arg, chunk, |task, args| {
        let first_plane = task * chunk / out_plane;
        for (pi, plane_args) in args.chunks_mut(out_plane).enumerate() {
            let base = (first_plane + pi) * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = None::<(usize, T)>;
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = base + iy as usize * w + ix as usize;
                            if best.is_none_or(|(_, v)| xd[idx] > v) {
                                best = Some((idx, xd[idx]));
                            }
                        }
                    }
                    plane_args[oy * wo + ox] = best.map_or(base, |(i, _)| i);
                }
            }
        }
    });
    for (o, &i) in out.iter_mut().zip(&arg) {
        *o = xd[i];
    }
    Ok((Tensor::new(vec![b, c, ho, wo], out)?, arg))
}

pub fn maxpool2d_backward<T: Float>(dy: &Tensor<T>, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor<T>> {
    if dy.len() != argmax.len() {
        return Err(shape_err("maxpool2d_backward", "upstream gradient and argmax lengths differ"));
    }
    let mut dx = Tensor::zeros(input_shape)?;
    let dxd = dx.data_mut();
    for (&g, &i) in dy.data().iter().zip(argmax) {
        dxd[i] += g;
    }
    Ok(dx)
}

/// Unpadded average pooling.
pub fn avgpool2d<T: Float>(x: &Tensor<T>, kernel: usize, stride: usize) -> Result<Tensor<T>> {
    let ([b, c, h, w], ho, wo) = pooled_dims("avgpool2d", x, kernel, stride, 0)?;
    let xd = x.data();
    let out_plane = ho * wo;
    let inv = T::from_usize(kernel * kernel).unwrap_or_else(T::one).recip();
    let mut out = vec![T::zero(); b * c * out_plane];
    let chunk = plane_chunk(b * c, out_plane);
    map_chunks_mut(&mut out, chunk, |task, outs| {
        let first_plane = task * chunk / out_plane;
        for (pi, plane_out) in outs.chunks_mut(out_plane).enumerate() {
            let src = &xd[(first_plane + pi) * h * w..][..h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut sum = T::zero();
                    for ky in 0..kernel {
                        let row = &src[(oy * stride + ky) * w + ox * stride..][..kernel];
                        sum += row.iter().copied().sum::<T>();
                    }
                    plane_out[oy * wo + ox] = sum * inv;
                }
            }
        }
    });
    Tensor::new(vec![b, c, ho, wo], out)
}

pub fn avgpool2d_backward<T: Float>(
    dy: &Tensor<T>,
    input_shape: &[usize],
    kernel: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    let [b, c, ho, wo] = dy.dims4("avgpool2d_backward")?;
    let mut dx = Tensor::zeros(input_shape)?;
    let [_, _, h, w] = dx.dims4("avgpool2d_backward")?;
    let inv = T::from_usize(kernel * kernel).unwrap_or_else(T::one).recip();
    let dyd = dy.data();
    let dxd = dx.data_mut();
    for p in 0..b * c {
        for oy in 0..ho {
            for ox in 0..wo {
                let g = dyd[(p * ho + oy) * wo + ox] * inv;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        dxd[p * h * w + (oy * stride + ky) * w + ox * stride + kx] += g;
                    }
                }
            }
        }
    }
    Ok(dx)
}

/// Mean over each spatial plane: `[B,C,H,W] -> [B,C,1,1]`.
pub fn global_avgpool<T: Float>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, h, w] = x.dims4("global_avgpool")?;
    let inv = T::from_usize(h * w).unwrap_or_else(T::one).recip();
    let out = x
        .data()
        .chunks(h * w)
        .map(|plane| plane.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::new(vec![b, c, 1, 1], out)
}

pub fn global_avgpool_backward<T: Float>(dy: &Tensor<T>, input_shape: &[usize]) -> Result<Tensor<T>> {
    let mut dx = Tensor::zeros(input_shape)?;
    let [b, c, h, w] = dx.dims4("global_avgpool_backward")?;
    if dy.len() != b * c {
        return Err(shape_err("global_avgpool_backward", format!("upstream gradient {:?}", dy.shape())));
    }
    let inv = T::from_usize(h * w).unwrap_or_else(T::one).recip();
    for (plane, &g) in dx.data_mut().chunks_mut(h * w).zip(dy.data()) {
        plane.fill(g * inv);
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn avgpool_is_arithmetic_mean() {
        let x = Tensor::<f32>::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avgpool2d(&x, 2, 2).unwrap().data(), &[2.5]);
    }

    #[test]
    fn padded_maxpool_halves_extent() {
        let x = Tensor::<f32>::new(vec![1, 1, 4, 4], (0..16).map(|v| v as f32).collect()).unwrap();
        let (y, arg) = maxpool2d(&x, 3, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[5.0, 7.0, 13.0, 15.0]);
        assert_eq!(arg, vec![5, 7, 13, 15]);
    }

    #[test]
    fn maxpool_ignores_negative_padding_values() {
        let x = Tensor::<f32>::full(&[1, 1, 2, 2], -3.0).unwrap();
        let (y, _) = maxpool2d(&x, 3, 2, 1).unwrap();
        assert_eq!(y.data(), &[-3.0]);
    }

    #[test]
    fn global_pool_shape_and_value() {
        let x = Tensor::<f32>::new(vec![1, 2, 1, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let y = global_avgpool(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 1, 1]);
        assert_eq!(y.data(), &[2.0, 6.0]);
    }

    #[test]
    fn odd_extent_floors() {
        let x = Tensor::<f32>::zeros(&[1, 1, 5, 5]).unwrap();
        assert_eq!(avgpool2d(&x, 2, 2).unwrap().shape(), &[1, 1, 2, 2]);
    }
}
