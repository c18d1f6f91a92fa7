//! 2-D convolution and its transpose, lowered to matrix products.
//!
//! Weight layouts follow the usual convention: `conv2d` takes
//! `(out, in, k, k)` and `conv_transpose2d` takes `(in, out, k, k)`, so a
//! single weight tensor gives a conv/transposed-conv adjoint pair.

use crate::error::{shape_err, GradError, Result};
use crate::gemm::{col2im, gemm, im2col, Mat, Window};
use crate::graph::{Ctx, Grads, Graph, Node, Op, Var};
use crate::real::Real;
use crate::tensor::{dims4, Tensor};

/// `floor((size + 2·pad - k) / stride) + 1`, or `None` if the kernel does not fit.
pub fn conv2d_output_size(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || size + 2 * pad < k {
        return None;
    }
    Some((size + 2 * pad - k) / stride + 1)
}

/// `(size - 1)·stride - 2·pad + k`, or `None` if that is not positive.
pub fn conv_transpose2d_output_size(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || size == 0 {
        return None;
    }
    let full = (size - 1) * stride + k;
    (full > 2 * pad).then(|| full - 2 * pad)
}

fn square_kernel(wshape: [usize; 4]) -> Result<usize> {
    if wshape[2] != wshape[3] || wshape[2] == 0 {
        return shape_err(format!("kernel must be square and non-empty, got {wshape:?}"));
    }
    Ok(wshape[2])
}

fn check_bias<T: Real>(g: &Graph<T>, b: Option<Var>, channels: usize) -> Result<()> {
    if let Some(b) = b {
        if g.value(b).len() != channels {
            return shape_err(format!("bias has {} entries, expected {channels}", g.value(b).len()));
        }
    }
    Ok(())
}

impl<T: Real> Graph<T> {
    /// Cross-correlation of an NCHW input with an `(out, in, k, k)` kernel.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        if stride == 0 {
            return Err(GradError::Argument("stride must be at least 1".into()));
        }
        let [n, c, h, wd] = dims4(self.shape(x))?;
        let ws = dims4(self.shape(w))?;
        let k = square_kernel(ws)?;
        if ws[1] != c {
            return shape_err(format!("conv2d: input has {c} channels, kernel expects {}", ws[1]));
        }
        check_bias(self, b, ws[0])?;
        let (Some(oh), Some(ow)) = (conv2d_output_size(h, k, stride, pad), conv2d_output_size(wd, k, stride, pad)) else {
            return shape_err(format!("conv2d: kernel {k} does not fit {h}x{wd} with pad {pad}"));
        };
        let out_c = ws[0];
        let win = Window { channels: c, h, w: wd, k, stride, pad, out_h: oh, out_w: ow };
        let (rows, ncol) = (win.col_rows(), win.col_cols());
        let mut cols = vec![T::zero(); rows * ncol];
        let mut out = vec![T::zero(); n * out_c * ncol];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        for s in 0..n {
            im2col(&xv[s * c * h * wd..(s + 1) * c * h * wd], &win, &mut cols);
            let dst = &mut out[s * out_c * ncol..(s + 1) * out_c * ncol];
            gemm(out_c, rows, ncol, Mat::rows(wv, rows), Mat::rows(&cols, ncol), T::zero(), dst);
            if let Some(b) = b {
                let bv = self.value(b).data();
                for (o, plane) in dst.chunks_mut(ncol).enumerate() {
                    plane.iter_mut().for_each(|v| *v += bv[o]);
                }
            }
        }
        let value = Tensor::new(vec![n, out_c, oh, ow], out)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(value, Op::Conv2d { x, w, b, stride, pad }, &inputs))
    }

    /// Transposed convolution with an `(in, out, k, k)` kernel; the adjoint
    /// of [`Graph::conv2d`] for the same weight.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        if stride == 0 {
            return Err(GradError::Argument("stride must be at least 1".into()));
        }
        let [n, c, h, wd] = dims4(self.shape(x))?;
        let ws = dims4(self.shape(w))?;
        let k = square_kernel(ws)?;
        if ws[0] != c {
            return shape_err(format!("conv_transpose2d: input has {c} channels, kernel expects {}", ws[0]));
        }
        let out_c = ws[1];
        check_bias(self, b, out_c)?;
        let (Some(oh), Some(ow)) = (
            conv_transpose2d_output_size(h, k, stride, pad),
            conv_transpose2d_output_size(wd, k, stride, pad),
        ) else {
            return shape_err(format!("conv_transpose2d: empty output for {h}x{wd}"));
        };
        // the forward conv over the output grid must land back on the input grid
        if conv2d_output_size(oh, k, stride, pad) != Some(h) || conv2d_output_size(ow, k, stride, pad) != Some(wd) {
            return shape_err("conv_transpose2d: inconsistent stride/padding for input size");
        }
        let win = Window { channels: out_c, h: oh, w: ow, k, stride, pad, out_h: h, out_w: wd };
        let (rows, ncol) = (win.col_rows(), win.col_cols());
        let mut cols = vec![T::zero(); rows * ncol];
        let mut out = vec![T::zero(); n * out_c * oh * ow];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        for s in 0..n {
            // cols = W^T · x, W viewed as (in, out·k·k)
            gemm(
                rows,
                c,
                ncol,
                Mat::transposed(wv, rows),
                Mat::rows(&xv[s * c * ncol..(s + 1) * c * ncol], ncol),
                T::zero(),
                &mut cols,
            );
            let dst = &mut out[s * out_c * oh * ow..(s + 1) * out_c * oh * ow];
            col2im(&cols, &win, dst);
            if let Some(b) = b {
                let bv = self.value(b).data();
                for (o, plane) in dst.chunks_mut(oh * ow).enumerate() {
                    plane.iter_mut().for_each(|v| *v += bv[o]);
                }
            }
        }
        let value = Tensor::new(vec![n, out_c, oh, ow], out)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(value, Op::ConvT2d { x, w, b, stride, pad }, &inputs))
    }
}

fn bias_backward<T: Real>(ctx: &Ctx<'_, T>, grads: &mut Grads<T>, b: Option<Var>, gout: &[T], n: usize, out_c: usize, plane: usize) {
    if let Some(b) = b {
        ctx.acc(grads, b, |g| {
            for s in 0..n {
                for o in 0..out_c {
                    let base = (s * out_c + o) * plane;
                    g[o] += gout[base..base + plane].iter().copied().sum::<T>();
                }
            }
        });
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Real>(
    ctx: &Ctx<'_, T>,
    grads: &mut Grads<T>,
    node: &Node<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    stride: usize,
    pad: usize,
    gout: &[T],
) {
    let [n, c, h, wd] = ctx.dims(x);
    let ws = ctx.dims(w);
    let [_, out_c, oh, ow] = dims4(node.value.shape()).expect("conv output is NCHW");
    let k = ws[2];
    let win = Window { channels: c, h, w: wd, k, stride, pad, out_h: oh, out_w: ow };
    let (rows, ncol) = (win.col_rows(), win.col_cols());
    let xv = ctx.val(x);
    let wv = ctx.val(w);
    let mut cols = vec![T::zero(); rows * ncol];
    if ctx.wants(w) {
        ctx.acc(grads, w, |gw| {
            for s in 0..n {
                im2col(&xv[s * c * h * wd..(s + 1) * c * h * wd], &win, &mut cols);
                let go = &gout[s * out_c * ncol..(s + 1) * out_c * ncol];
                // dW += dOut · cols^T
                gemm(out_c, ncol, rows, Mat::rows(go, ncol), Mat::transposed(&cols, ncol), T::one(), gw);
            }
        });
    }
    if ctx.wants(x) {
        ctx.acc(grads, x, |gx| {
            for s in 0..n {
                let go = &gout[s * out_c * ncol..(s + 1) * out_c * ncol];
                // dcols = W^T · dOut
                gemm(rows, out_c, ncol, Mat::transposed(wv, rows), Mat::rows(go, ncol), T::zero(), &mut cols);
                col2im(&cols, &win, &mut gx[s * c * h * wd..(s + 1) * c * h * wd]);
            }
        });
    }
    bias_backward(ctx, grads, b, gout, n, out_c, ncol);
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_transpose2d_backward<T: Real>(
    ctx: &Ctx<'_, T>,
    grads: &mut Grads<T>,
    node: &Node<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    stride: usize,
    pad: usize,
    gout: &[T],
) {
    let [n, c, h, wd] = ctx.dims(x);
    let ws = ctx.dims(w);
    let [_, out_c, oh, ow] = dims4(node.value.shape()).expect("conv output is NCHW");
    let k = ws[2];
    let win = Window { channels: out_c, h: oh, w: ow, k, stride, pad, out_h: h, out_w: wd };
    let (rows, ncol) = (win.col_rows(), win.col_cols());
    let out_plane = out_c * oh * ow;
    let xv = ctx.val(x);
    let wv = ctx.val(w);
    let mut cols = vec![T::zero(); rows * ncol];
    let need_w = ctx.wants(w);
    let need_x = ctx.wants(x);
    let mut gw_local = if need_w { Some(vec![T::zero(); wv.len()]) } else { None };
    let mut gx_local = if need_x { Some(vec![T::zero(); xv.len()]) } else { None };
    for s in 0..n {
        im2col(&gout[s * out_plane..(s + 1) * out_plane], &win, &mut cols);
        if let Some(gw) = gw_local.as_mut() {
            // dW (in, out·k·k) += x · dcols^T
            gemm(c, ncol, rows, Mat::rows(&xv[s * c * ncol..(s + 1) * c * ncol], ncol), Mat::transposed(&cols, ncol), T::one(), gw);
        }
        if let Some(gx) = gx_local.as_mut() {
            // dx = W · dcols
            gemm(c, rows, ncol, Mat::rows(wv, rows), Mat::rows(&cols, ncol), T::zero(), &mut gx[s * c * ncol..(s + 1) * c * ncol]);
        }
    }
    if let Some(gw) = gw_local {
        ctx.acc(grads, w, |g| g.iter_mut().zip(&gw).for_each(|(a, v)| *a += *v));
    }
    if let Some(gx) = gx_local {
        ctx.acc(grads, x, |g| g.iter_mut().zip(&gx).for_each(|(a, v)| *a += *v));
    }
    bias_backward(ctx, grads, b, gout, n, out_c, oh * ow);
}
