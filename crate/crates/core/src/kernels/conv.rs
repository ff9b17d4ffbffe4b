//! Bias-free 2-D cross-correlation lowered to GEMM through im2col.
//!
//! A batch is split into sample chunks (one per task); each chunk is lowered
//! into a single `[cin*k*k, samples*ho*wo]` column matrix so that the small
//! spatial extents deep in the network still produce wide GEMMs.

use super::{gemm, MatRef};
use crate::error::{arg_err, shape_err, Result};
use crate::parallel::{map_chunks_mut, task_count};
use crate::tensor::{Float, Tensor};

/// Output extent of a convolution or pooling window, `None` if the window does not fit.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new<T: Float>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Result<Self> {
        let [batch, cin, h, wd] = x.dims4("conv2d")?;
        let [cout, wcin, kh, kw] = w.dims4("conv2d")?;
        if wcin != cin {
            return Err(shape_err(
                "conv2d",
                format!(
                    "input {:?} has {cin} channels but weight {:?} expects {wcin}",
                    x.shape(),
                    w.shape()
                ),
            ));
        }
        if kh != kw || !(kh == 1 || kh == 3) {
            return Err(arg_err("conv2d", format!("kernel must be 1x1 or 3x3, got {kh}x{kw}")));
        }
        if !(stride == 1 || stride == 2) {
            return Err(arg_err("conv2d", format!("stride must be 1 or 2, got {stride}")));
        }
        let ho = conv_output_extent(h, kh, stride, pad);
        let wo = conv_output_extent(wd, kw, stride, pad);
        let (Some(ho), Some(wo)) = (ho, wo) else {
            return Err(shape_err(
                "conv2d",
                format!("{kh}x{kw} window with pad {pad} does not fit input {:?}", x.shape()),
            ));
        };
        Ok(Self {
            batch,
            cin,
            h,
            w: wd,
            cout,
            k: kh,
            stride,
            pad,
            ho,
            wo,
        })
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn in_plane(&self) -> usize {
        self.h * self.w
    }

    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn samples_per_task(&self) -> usize {
        self.batch.div_ceil(task_count(self.batch))
    }
}

/// Unfolds samples `first..first+count` into a `[patch, count*plane]` matrix.
fn im2col<T: Float>(g: &Geometry, x: &[T], first: usize, count: usize, cols: &mut [T]) {
    let plane = g.out_plane();
    let n = count * plane;
    for ci in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for s in 0..count {
                    let src = &x[((first + s) * g.cin + ci) * g.in_plane()..][..g.in_plane()];
                    for oy in 0..g.ho {
                        let drow = &mut dst[s * plane + oy * g.wo..][..g.wo];
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            drow.fill(T::zero());
                            continue;
                        }
                        let srow = &src[iy as usize * g.w..][..g.w];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            *d = if ix < 0 || ix >= g.w as isize {
                                T::zero()
                            } else {
                                srow[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into `dx` (which holds `count` samples).
fn col2im<T: Float>(g: &Geometry, cols: &[T], count: usize, dx: &mut [T]) {
    let plane = g.out_plane();
    let n = count * plane;
    for ci in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for s in 0..count {
                    let dst = &mut dx[(s * g.cin + ci) * g.in_plane()..][..g.in_plane()];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let srow = &src[s * plane + oy * g.wo..][..g.wo];
                        let drow = &mut dst[iy as usize * g.w..][..g.w];
                        for (ox, &v) in srow.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                drow[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Bias-free cross-correlation: `x [B,Cin,H,W] * w [Cout,Cin,k,k] -> [B,Cout,H',W']`.
pub fn conv2d<T: Float>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
    let g = Geometry::new(x, w, stride, pad)?;
    let plane = g.out_plane();
    let per = g.samples_per_task();
    let mut out = vec![T::zero(); g.batch * g.cout * plane];
    let (xd, wd) = (x.data(), w.data());
    let weights = MatRef::row_major(wd, g.cout, g.patch());

    map_chunks_mut(&mut out, per * g.cout * plane, |task, chunk| {
        let first = task * per;
        let count = chunk.len() / (g.cout * plane);
        let n = count * plane;
        if count == 1 && g.pointwise() {
            let xs = &xd[first * g.cin * plane..][..g.cin * plane];
            gemm(weights, MatRef::row_major(xs, g.cin, plane), T::zero(), chunk);
            return;
        }
        let mut cols = vec![T::zero(); g.patch() * n];
        im2col(&g, xd, first, count, &mut cols);
        let cols = MatRef::row_major(&cols, g.patch(), n);
        if count == 1 {
            gemm(weights, cols, T::zero(), chunk);
            return;
        }
        let mut tmp = vec![T::zero(); g.cout * n];
        gemm(weights, cols, T::zero(), &mut tmp);
        for s in 0..count {
            for co in 0..g.cout {
                chunk[(s * g.cout + co) * plane..][..plane]
                    .copy_from_slice(&tmp[co * n + s * plane..][..plane]);
            }
        }
    });

    Tensor::new(vec![g.batch, g.cout, g.ho, g.wo], out)
}

/// Gradients of [`conv2d`] w.r.t. its input (only if `need_input_grad`) and weight.
pub fn conv2d_backward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_input_grad: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>)> {
    let g = Geometry::new(x, w, stride, pad)?;
    let expected = [g.batch, g.cout, g.ho, g.wo];
    if dy.shape() != expected {
        return Err(shape_err(
            "conv2d_backward",
            format!("upstream gradient {:?} does not match output {expected:?}", dy.shape()),
        ));
    }
    let plane = g.out_plane();
    let per = g.samples_per_task();
    let (xd, wd, dyd) = (x.data(), w.data(), dy.data());
    let mut dx = vec![T::zero(); g.batch * g.cin * g.in_plane()];

    let partials = map_chunks_mut(&mut dx, per * g.cin * g.in_plane(), |task, dx_chunk| {
        let first = task * per;
        let count = dx_chunk.len() / (g.cin * g.in_plane());
        let n = count * plane;

        let gathered;
        let dyc: &[T] = if count == 1 {
            &dyd[first * g.cout * plane..][..g.cout * plane]
        } else {
            let mut buf = vec![T::zero(); g.cout * n];
            for s in 0..count {
                for co in 0..g.cout {
                    buf[co * n + s * plane..][..plane]
                        .copy_from_slice(&dyd[((first + s) * g.cout + co) * plane..][..plane]);
                }
            }
            gathered = buf;
            &gathered
        };
        let dyc = MatRef::row_major(dyc, g.cout, n);

        let unfolded;
        let cols: &[T] = if count == 1 && g.pointwise() {
            &xd[first * g.cin * plane..][..g.cin * plane]
        } else {
            let mut buf = vec![T::zero(); g.patch() * n];
            im2col(&g, xd, first, count, &mut buf);
            unfolded = buf;
            &unfolded
        };

        let mut dw = vec![T::zero(); g.cout * g.patch()];
        gemm(dyc, MatRef::transposed(cols, g.patch(), n), T::zero(), &mut dw);

        if need_input_grad {
            let wt = MatRef::transposed(wd, g.cout, g.patch());
            if count == 1 && g.pointwise() {
                gemm(wt, dyc, T::zero(), dx_chunk);
            } else {
                let mut dcols = vec![T::zero(); g.patch() * n];
                gemm(wt, dyc, T::zero(), &mut dcols);
                col2im(&g, &dcols, count, dx_chunk);
            }
        }
        dw
    });

    let mut dw = vec![T::zero(); g.cout * g.patch()];
    for part in &partials {
        for (acc, &v) in dw.iter_mut().zip(part) {
            *acc += v;
        }
    }
    let dw = Tensor::new(w.shape().to_vec(), dw)?;
    let dx = if need_input_grad {
        Some(Tensor::new(x.shape().to_vec(), dx)?)
    } else {
        None
    };
    Ok((dx, dw))
}
