use rayon::prelude::*;

use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Kernel, bias, stride and symmetric zero padding of a convolution layer.
///
/// For an ordinary convolution the kernel is laid out as
/// `(c_out, c_in, k_h, k_w)`. For a transposed convolution it is
/// `(c_in, c_out, k_h, k_w)`, the same array read as the adjoint operator.
/// In both cases `bias` has one entry per output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub kernel: Tensor,
    pub bias: Vec<f64>,
    pub stride: usize,
    pub padding: usize,
}

/// Gradients of a (transposed) convolution with respect to its input and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads {
    pub grad_x: Tensor,
    pub grad_kernel: Tensor,
    pub grad_bias: Vec<f64>,
}

impl ConvParams {
    /// Parameters for [`conv2d_forward`]; `bias` must match the kernel's leading dimension.
    pub fn new(kernel: Tensor, bias: Vec<f64>, stride: usize, padding: usize) -> Result<Self> {
        let p = ConvParams {
            kernel,
            bias,
            stride,
            padding,
        };
        p.validate(false)?;
        Ok(p)
    }

    /// Parameters for [`transposed_conv2d_forward`]; `bias` must match the kernel's second dimension.
    pub fn new_transposed(
        kernel: Tensor,
        bias: Vec<f64>,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let p = ConvParams {
            kernel,
            bias,
            stride,
            padding,
        };
        p.validate(true)?;
        Ok(p)
    }

    pub fn kernel_shape(&self) -> Shape {
        self.kernel.shape()
    }

    /// Number of scalar parameters (kernel plus bias).
    pub fn len(&self) -> usize {
        self.kernel.shape().len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self, transposed: bool) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        let k = self.kernel.shape();
        let c_out = if transposed { k.c } else { k.n };
        if self.bias.len() != c_out {
            return Err(Error::Dimension(format!(
                "bias has {} entries but kernel {k} has {c_out} output channels",
                self.bias.len()
            )));
        }
        Ok(())
    }
}

/// Index arithmetic shared by im2col/col2im: a stride/pad window sliding over
/// a `c_in x h x w` input and producing `h_out x w_out` positions.
#[derive(Clone, Copy, Debug)]
struct Window {
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
}

impl Window {
    fn new(
        c_in: usize,
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let h_out = output_len(h, kh, stride, pad, "height")?;
        let w_out = output_len(w, kw, stride, pad, "width")?;
        Ok(Window {
            c_in,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            h_out,
            w_out,
        })
    }

    /// Rows of the unfolded matrix.
    fn rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    /// Columns of the unfolded matrix.
    fn cols(&self) -> usize {
        self.h_out * self.w_out
    }

    /// Input coordinate hit by output position `o` and kernel tap `k`, if inside the image.
    #[inline]
    fn source(&self, o: usize, k: usize, len: usize) -> Option<usize> {
        (o * self.stride + k)
            .checked_sub(self.pad)
            .filter(|&i| i < len)
    }

    /// Unfolds one `c_in x h x w` item into a `rows x cols` matrix; padded taps are 0.
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let cols = self.cols();
        let mut out = vec![0.0; self.rows() * cols];
        out.par_chunks_mut(cols).enumerate().for_each(|(row, dst)| {
            let ci = row / (self.kh * self.kw);
            let a = (row / self.kw) % self.kh;
            let b = row % self.kw;
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for oh in 0..self.h_out {
                let Some(ih) = self.source(oh, a, self.h) else {
                    continue;
                };
                let src = &plane[ih * self.w..(ih + 1) * self.w];
                let dst = &mut dst[oh * self.w_out..(oh + 1) * self.w_out];
                for (ow, d) in dst.iter_mut().enumerate() {
                    if let Some(iw) = self.source(ow, b, self.w) {
                        *d = src[iw];
                    }
                }
            }
        });
        out
    }

    /// Folds a `rows x cols` matrix back onto a `c_in x h x w` item, summing overlaps
    /// in ascending tap order.
    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let plane_len = self.h * self.w;
        let ncols = self.cols();
        let taps = self.kh * self.kw;
        let mut out = vec![0.0; self.c_in * plane_len];
        out.par_chunks_mut(plane_len)
            .enumerate()
            .for_each(|(ci, plane)| {
                for t in 0..taps {
                    let (a, b) = (t / self.kw, t % self.kw);
                    let row = &cols[(ci * taps + t) * ncols..(ci * taps + t + 1) * ncols];
                    for oh in 0..self.h_out {
                        let Some(ih) = self.source(oh, a, self.h) else {
                            continue;
                        };
                        for ow in 0..self.w_out {
                            if let Some(iw) = self.source(ow, b, self.w) {
                                plane[ih * self.w + iw] += row[oh * self.w_out + ow];
                            }
                        }
                    }
                }
            });
        out
    }
}

fn output_len(len: usize, k: usize, stride: usize, pad: usize, axis: &str) -> Result<usize> {
    let padded = len + 2 * pad;
    if k == 0 || padded < k {
        return Err(Error::Config(format!(
            "kernel {axis} {k} does not fit input {axis} {len} with padding {pad}"
        )));
    }
    if !(padded - k).is_multiple_of(stride) {
        return Err(Error::Config(format!(
            "output {axis} ({len} + 2*{pad} - {k})/{stride} + 1 is not an integer"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// `out[co] = bias[co] + sum_k kernel[co][k] * cols[k]`, one output channel per task,
/// accumulating in ascending k.
fn gemm_rows(
    kernel: &[f64],
    bias: Option<&[f64]>,
    cols: &[f64],
    c_out: usize,
    ncols: usize,
) -> Vec<f64> {
    let k_len = kernel.len() / c_out;
    let mut out = vec![0.0; c_out * ncols];
    out.par_chunks_mut(ncols).enumerate().for_each(|(co, row)| {
        if let Some(b) = bias {
            row.fill(b[co]);
        }
        let weights = &kernel[co * k_len..(co + 1) * k_len];
        for (k, &wk) in weights.iter().enumerate() {
            let src = &cols[k * ncols..(k + 1) * ncols];
            for (r, s) in row.iter_mut().zip(src) {
                *r += wk * s;
            }
        }
    });
    out
}

/// Correlates `x` with a `(c_out, c_in, kh, kw)` kernel slice via im2col.
#[allow(clippy::too_many_arguments)]
fn correlate(
    x: &Tensor,
    kernel: &[f64],
    kshape: Shape,
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let xs = x.shape();
    let win = Window::new(xs.c, xs.h, xs.w, kshape.h, kshape.w, stride, pad)?;
    let out_shape = Shape::new(xs.n, kshape.n, win.h_out, win.w_out);
    let mut data = Vec::with_capacity(out_shape.len());
    for n in 0..xs.n {
        let cols = win.im2col(x.item(n));
        data.extend(gemm_rows(kernel, bias, &cols, kshape.n, win.cols()));
    }
    Tensor::from_vec(out_shape, data)
}

/// Strided, zero-padded 2-D cross-correlation plus bias.
pub fn conv2d_forward(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    p.validate(false)?;
    let (xs, ks) = (x.shape(), p.kernel.shape());
    if xs.c != ks.c {
        return Err(Error::Dimension(format!(
            "conv input {xs} has {} channels but kernel {ks} expects {}",
            xs.c, ks.c
        )));
    }
    correlate(x, p.kernel.data(), ks, Some(&p.bias), p.stride, p.padding)
}

/// Gradients of `sum(grad_out * conv2d_forward(x, p))` with respect to `x`, kernel and bias.
pub fn conv2d_backward(x: &Tensor, p: &ConvParams, grad_out: &Tensor) -> Result<ConvGrads> {
    p.validate(false)?;
    let (xs, ks, gs) = (x.shape(), p.kernel.shape(), grad_out.shape());
    if xs.c != ks.c {
        return Err(Error::Dimension(format!(
            "conv input {xs} does not match kernel {ks}"
        )));
    }
    let win = Window::new(xs.c, xs.h, xs.w, ks.h, ks.w, p.stride, p.padding)?;
    let expected = Shape::new(xs.n, ks.n, win.h_out, win.w_out);
    if gs != expected {
        return Err(Error::Dimension(format!(
            "conv output gradient {gs} does not match forward output {expected}"
        )));
    }

    let ncols = win.cols();
    let k_len = win.rows();
    let kernel = p.kernel.data();
    let mut grad_kernel = vec![0.0; ks.len()];
    let mut grad_bias = vec![0.0; ks.n];
    let mut grad_x = Vec::with_capacity(xs.len());

    for n in 0..xs.n {
        let g = grad_out.item(n);
        for (co, gb) in grad_bias.iter_mut().enumerate() {
            *gb += g[co * ncols..(co + 1) * ncols].iter().sum::<f64>();
        }

        let cols = win.im2col(x.item(n));
        grad_kernel
            .par_chunks_mut(k_len)
            .enumerate()
            .for_each(|(co, gk)| {
                let grow = &g[co * ncols..(co + 1) * ncols];
                for (k, acc) in gk.iter_mut().enumerate() {
                    let crow = &cols[k * ncols..(k + 1) * ncols];
                    *acc += grow.iter().zip(crow).map(|(a, b)| a * b).sum::<f64>();
                }
            });

        // d(cols)[k] = sum_co kernel[co][k] * g[co]
        let mut dcols = vec![0.0; k_len * ncols];
        dcols
            .par_chunks_mut(ncols)
            .enumerate()
            .for_each(|(k, row)| {
                for co in 0..ks.n {
                    let wk = kernel[co * k_len + k];
                    let grow = &g[co * ncols..(co + 1) * ncols];
                    for (r, gv) in row.iter_mut().zip(grow) {
                        *r += wk * gv;
                    }
                }
            });
        grad_x.extend(win.col2im(&dcols));
    }

    Ok(ConvGrads {
        grad_x: Tensor::from_vec(xs, grad_x)?,
        grad_kernel: Tensor::from_vec(ks, grad_kernel)?,
        grad_bias,
    })
}

fn transposed_output_len(
    len: usize,
    k: usize,
    stride: usize,
    pad: usize,
    axis: &str,
) -> Result<usize> {
    let full = (len - 1) * stride + k;
    if full <= 2 * pad {
        return Err(Error::Config(format!(
            "transposed conv output {axis} ({len}-1)*{stride} + {k} - 2*{pad} is not positive"
        )));
    }
    Ok(full - 2 * pad)
}

/// Transposed convolution with kernel `(c_in, c_out, kh, kw)`: every input pixel
/// scatters a scaled copy of its kernel slice onto the output, stride apart.
pub fn transposed_conv2d_forward(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    p.validate(true)?;
    let (xs, ks) = (x.shape(), p.kernel.shape());
    if xs.c != ks.n {
        return Err(Error::Dimension(format!(
            "transposed conv input {xs} has {} channels but kernel {ks} expects {}",
            xs.c, ks.n
        )));
    }
    let h_out = transposed_output_len(xs.h, ks.h, p.stride, p.padding, "height")?;
    let w_out = transposed_output_len(xs.w, ks.w, p.stride, p.padding, "width")?;
    let out_shape = Shape::new(xs.n, ks.c, h_out, w_out);
    let plane = h_out * w_out;
    let kernel = p.kernel.data();
    let taps = ks.h * ks.w;
    let (s, pad) = (p.stride, p.padding);

    let mut out = vec![0.0; out_shape.len()];
    for n in 0..xs.n {
        let xn = x.item(n);
        out[n * ks.c * plane..(n + 1) * ks.c * plane]
            .par_chunks_mut(plane)
            .enumerate()
            .for_each(|(co, dst)| {
                dst.fill(p.bias[co]);
                for ci in 0..xs.c {
                    let kslice = &kernel[(ci * ks.c + co) * taps..(ci * ks.c + co + 1) * taps];
                    let src = &xn[ci * xs.plane()..(ci + 1) * xs.plane()];
                    for i in 0..xs.h {
                        for j in 0..xs.w {
                            let v = src[i * xs.w + j];
                            for a in 0..ks.h {
                                let Some(oh) = (i * s + a).checked_sub(pad).filter(|&o| o < h_out)
                                else {
                                    continue;
                                };
                                for b in 0..ks.w {
                                    if let Some(ow) =
                                        (j * s + b).checked_sub(pad).filter(|&o| o < w_out)
                                    {
                                        dst[oh * w_out + ow] += v * kslice[a * ks.w + b];
                                    }
                                }
                            }
                        }
                    }
                }
            });
    }
    Tensor::from_vec(out_shape, out)
}

/// Gradients of `sum(grad_out * transposed_conv2d_forward(x, p))`.
pub fn transposed_conv2d_backward(
    x: &Tensor,
    p: &ConvParams,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    p.validate(true)?;
    let (xs, ks, gs) = (x.shape(), p.kernel.shape(), grad_out.shape());
    if xs.c != ks.n {
        return Err(Error::Dimension(format!(
            "transposed conv input {xs} does not match kernel {ks}"
        )));
    }
    let expected = Shape::new(
        xs.n,
        ks.c,
        transposed_output_len(xs.h, ks.h, p.stride, p.padding, "height")?,
        transposed_output_len(xs.w, ks.w, p.stride, p.padding, "width")?,
    );
    if gs != expected {
        return Err(Error::Dimension(format!(
            "transposed conv output gradient {gs} does not match forward output {expected}"
        )));
    }

    // The input gradient is the ordinary correlation of grad_out with the same
    // kernel read as (c_out = c_in_t, c_in = c_out_t).
    let grad_x = correlate(grad_out, p.kernel.data(), ks, None, p.stride, p.padding)?;

    let win = Window::new(gs.c, gs.h, gs.w, ks.h, ks.w, p.stride, p.padding)?;
    debug_assert_eq!((win.h_out, win.w_out), (xs.h, xs.w));
    let ncols = win.cols();
    let k_len = win.rows();
    let mut grad_kernel = vec![0.0; ks.len()];
    let mut grad_bias = vec![0.0; ks.c];
    for n in 0..xs.n {
        let g = grad_out.item(n);
        for (co, gb) in grad_bias.iter_mut().enumerate() {
            *gb += g[co * gs.plane()..(co + 1) * gs.plane()]
                .iter()
                .sum::<f64>();
        }
        let cols = win.im2col(g);
        let xn = x.item(n);
        grad_kernel
            .par_chunks_mut(k_len)
            .enumerate()
            .for_each(|(ci, gk)| {
                let xrow = &xn[ci * ncols..(ci + 1) * ncols];
                for (k, acc) in gk.iter_mut().enumerate() {
                    let crow = &cols[k * ncols..(k + 1) * ncols];
                    *acc += xrow.iter().zip(crow).map(|(a, b)| a * b).sum::<f64>();
                }
            });
    }

    Ok(ConvGrads {
        grad_x,
        grad_kernel: Tensor::from_vec(ks, grad_kernel)?,
        grad_bias,
    })
}
