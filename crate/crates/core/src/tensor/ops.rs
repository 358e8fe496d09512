use rayon::prelude::*;

use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Dense `rows x cols` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dimension("matrix", rows * cols, data.len()));
        }
        Ok(Matrix { rows, cols, data })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// One `k x k` filter per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseKernel {
    pub channels: usize,
    pub k: usize,
    pub data: Vec<f64>,
}

impl DepthwiseKernel {
    pub fn zeros(channels: usize, k: usize) -> Self {
        DepthwiseKernel {
            channels,
            k,
            data: vec![0.0; channels * k * k],
        }
    }

    /// Centered delta on every channel.
    pub fn identity(channels: usize, k: usize) -> Self {
        let mut kernel = Self::zeros(channels, k);
        let center = (k / 2) * k + k / 2;
        for c in 0..channels {
            kernel.data[c * k * k + center] = 1.0;
        }
        kernel
    }
}

/// Full convolution weights laid out `out x in x k x k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub out_channels: usize,
    pub in_channels: usize,
    pub k: usize,
    pub data: Vec<f64>,
}

impl ConvKernel {
    pub fn zeros(out_channels: usize, in_channels: usize, k: usize) -> Self {
        ConvKernel {
            out_channels,
            in_channels,
            k,
            data: vec![0.0; out_channels * in_channels * k * k],
        }
    }

    #[inline]
    pub fn get(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.data[((o * self.in_channels + i) * self.k + ky) * self.k + kx]
    }
}

/// Gradients of a layer with optional bias.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub grad_input: Tensor,
    pub grad_weight: Vec<f64>,
    pub grad_bias: Option<Vec<f64>>,
}

fn check_bias(op: &'static str, bias: Option<&[f64]>, expected: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != expected => Err(Error::dimension(op, expected, b.len())),
        _ => Ok(()),
    }
}

fn check_odd(op: &str, k: usize) -> Result<()> {
    if k.is_multiple_of(2) {
        return Err(Error::config(format!(
            "{op}: kernel size must be odd, got {k}"
        )));
    }
    Ok(())
}

/// Position-wise channel mixing (a 1x1 convolution).
pub fn linear_project(x: &Tensor, weight: &Matrix, bias: Option<&[f64]>) -> Result<Tensor> {
    let s = x.shape();
    if weight.cols != s.c {
        return Err(Error::dimension(
            "linear_project",
            format!("weight with {} columns for input {s}", s.c),
            format!("{}x{}", weight.rows, weight.cols),
        ));
    }
    check_bias("linear_project", bias, weight.rows)?;
    let out_shape = s.with_channels(weight.rows);
    let plane = s.plane();
    let mut out = vec![0.0; out_shape.numel()];
    out.par_chunks_mut(plane)
        .enumerate()
        .for_each(|(idx, dst)| {
            let (n, o) = (idx / weight.rows, idx % weight.rows);
            if let Some(b) = bias {
                dst.fill(b[o]);
            }
            for i in 0..s.c {
                let wv = weight.get(o, i);
                for (d, &v) in dst.iter_mut().zip(x.plane(n, i)) {
                    *d += wv * v;
                }
            }
        });
    Tensor::from_vec(out_shape, out)
}

pub fn linear_project_backward(
    x: &Tensor,
    weight: &Matrix,
    upstream: &Tensor,
    with_bias: bool,
) -> Result<LayerGrads> {
    let s = x.shape();
    let expected = s.with_channels(weight.rows);
    if upstream.shape() != expected || weight.cols != s.c {
        return Err(Error::dimension(
            "linear_project_backward",
            expected,
            upstream.shape(),
        ));
    }
    let plane = s.plane();
    let mut grad_input = vec![0.0; s.numel()];
    grad_input
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(idx, dst)| {
            let (n, i) = (idx / s.c, idx % s.c);
            for o in 0..weight.rows {
                let wv = weight.get(o, i);
                for (d, &u) in dst.iter_mut().zip(upstream.plane(n, o)) {
                    *d += wv * u;
                }
            }
        });
    let grad_weight: Vec<f64> = (0..weight.rows * weight.cols)
        .into_par_iter()
        .map(|idx| {
            let (o, i) = (idx / weight.cols, idx % weight.cols);
            (0..s.n)
                .map(|n| dot(upstream.plane(n, o), x.plane(n, i)))
                .sum()
        })
        .collect();
    let grad_bias = with_bias.then(|| channel_sums(upstream));
    Ok(LayerGrads {
        grad_input: Tensor::from_vec(s, grad_input)?,
        grad_weight,
        grad_bias,
    })
}

/// Per-channel `k x k` cross-correlation, zero padded to preserve extents.
pub fn depthwise_conv(
    x: &Tensor,
    kernel: &DepthwiseKernel,
    bias: Option<&[f64]>,
) -> Result<Tensor> {
    check_odd("depthwise_conv", kernel.k)?;
    let s = x.shape();
    if kernel.channels != s.c {
        return Err(Error::dimension("depthwise_conv", s.c, kernel.channels));
    }
    check_bias("depthwise_conv", bias, s.c)?;
    let k = kernel.k;
    let mut out = vec![0.0; s.numel()];
    out.par_chunks_mut(s.plane())
        .enumerate()
        .for_each(|(idx, dst)| {
            let c = idx % s.c;
            if let Some(b) = bias {
                dst.fill(b[c]);
            }
            let taps = &kernel.data[c * k * k..(c + 1) * k * k];
            correlate_plane(x.plane(idx / s.c, c), taps, k, s.h, s.w, dst);
        });
    Tensor::from_vec(s, out)
}

pub fn depthwise_conv_backward(
    x: &Tensor,
    kernel: &DepthwiseKernel,
    upstream: &Tensor,
    with_bias: bool,
) -> Result<LayerGrads> {
    check_odd("depthwise_conv_backward", kernel.k)?;
    let s = x.shape();
    if upstream.shape() != s || kernel.channels != s.c {
        return Err(Error::dimension(
            "depthwise_conv_backward",
            s,
            upstream.shape(),
        ));
    }
    let k = kernel.k;
    let mut grad_input = vec![0.0; s.numel()];
    grad_input
        .par_chunks_mut(s.plane())
        .enumerate()
        .for_each(|(idx, dst)| {
            let c = idx % s.c;
            let taps = &kernel.data[c * k * k..(c + 1) * k * k];
            scatter_plane(upstream.plane(idx / s.c, c), taps, k, s.h, s.w, dst);
        });
    let grad_weight: Vec<f64> = (0..s.c)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut g = vec![0.0; k * k];
            for n in 0..s.n {
                kernel_grad_plane(x.plane(n, c), upstream.plane(n, c), k, s.h, s.w, &mut g);
            }
            g
        })
        .collect();
    let grad_bias = with_bias.then(|| channel_sums(upstream));
    Ok(LayerGrads {
        grad_input: Tensor::from_vec(s, grad_input)?,
        grad_weight,
        grad_bias,
    })
}

/// Full cross-correlation, zero padded to preserve extents.
pub fn conv2d(x: &Tensor, kernel: &ConvKernel, bias: Option<&[f64]>) -> Result<Tensor> {
    check_odd("conv2d", kernel.k)?;
    let s = x.shape();
    if kernel.in_channels != s.c {
        return Err(Error::dimension(
            "conv2d",
            format!("kernel with {} input channels", s.c),
            kernel.in_channels,
        ));
    }
    check_bias("conv2d", bias, kernel.out_channels)?;
    let k = kernel.k;
    let out_shape = s.with_channels(kernel.out_channels);
    let mut out = vec![0.0; out_shape.numel()];
    out.par_chunks_mut(s.plane())
        .enumerate()
        .for_each(|(idx, dst)| {
            let (n, o) = (idx / kernel.out_channels, idx % kernel.out_channels);
            if let Some(b) = bias {
                dst.fill(b[o]);
            }
            for i in 0..s.c {
                let start = (o * kernel.in_channels + i) * k * k;
                correlate_plane(
                    x.plane(n, i),
                    &kernel.data[start..start + k * k],
                    k,
                    s.h,
                    s.w,
                    dst,
                );
            }
        });
    Tensor::from_vec(out_shape, out)
}

pub fn conv2d_backward(
    x: &Tensor,
    kernel: &ConvKernel,
    upstream: &Tensor,
    with_bias: bool,
) -> Result<LayerGrads> {
    check_odd("conv2d_backward", kernel.k)?;
    let s = x.shape();
    let expected = s.with_channels(kernel.out_channels);
    if upstream.shape() != expected || kernel.in_channels != s.c {
        return Err(Error::dimension(
            "conv2d_backward",
            expected,
            upstream.shape(),
        ));
    }
    let k = kernel.k;
    let mut grad_input = vec![0.0; s.numel()];
    grad_input
        .par_chunks_mut(s.plane())
        .enumerate()
        .for_each(|(idx, dst)| {
            let (n, i) = (idx / s.c, idx % s.c);
            for o in 0..kernel.out_channels {
                let start = (o * kernel.in_channels + i) * k * k;
                scatter_plane(
                    upstream.plane(n, o),
                    &kernel.data[start..start + k * k],
                    k,
                    s.h,
                    s.w,
                    dst,
                );
            }
        });
    let grad_weight: Vec<f64> = (0..kernel.out_channels * kernel.in_channels)
        .into_par_iter()
        .flat_map_iter(|idx| {
            let (o, i) = (idx / kernel.in_channels, idx % kernel.in_channels);
            let mut g = vec![0.0; k * k];
            for n in 0..s.n {
                kernel_grad_plane(x.plane(n, i), upstream.plane(n, o), k, s.h, s.w, &mut g);
            }
            g
        })
        .collect();
    let grad_bias = with_bias.then(|| channel_sums(upstream));
    Ok(LayerGrads {
        grad_input: Tensor::from_vec(s, grad_input)?,
        grad_weight,
        grad_bias,
    })
}

// dst[y, x] += sum_{ky,kx} taps[ky, kx] * src[y + ky - p, x + kx - p]
fn correlate_plane(src: &[f64], taps: &[f64], k: usize, h: usize, w: usize, dst: &mut [f64]) {
    let p = (k / 2) as isize;
    for ky in 0..k {
        for kx in 0..k {
            let t = taps[ky * k + kx];
            let (dy, dx) = (ky as isize - p, kx as isize - p);
            for y in 0..h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let (x0, x1) = valid_range(w, dx);
                let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                let drow = &mut dst[y * w..(y + 1) * w];
                for x in x0..x1 {
                    drow[x] += t * srow[(x as isize + dx) as usize];
                }
            }
        }
    }
}

// Adjoint of correlate_plane with respect to src.
fn scatter_plane(up: &[f64], taps: &[f64], k: usize, h: usize, w: usize, dst: &mut [f64]) {
    let p = (k / 2) as isize;
    for ky in 0..k {
        for kx in 0..k {
            let t = taps[ky * k + kx];
            let (dy, dx) = (ky as isize - p, kx as isize - p);
            for y in 0..h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let (x0, x1) = valid_range(w, dx);
                let urow = &up[y * w..(y + 1) * w];
                let drow = &mut dst[sy as usize * w..(sy as usize + 1) * w];
                for x in x0..x1 {
                    drow[(x as isize + dx) as usize] += t * urow[x];
                }
            }
        }
    }
}

fn kernel_grad_plane(src: &[f64], up: &[f64], k: usize, h: usize, w: usize, g: &mut [f64]) {
    let p = (k / 2) as isize;
    for ky in 0..k {
        for kx in 0..k {
            let (dy, dx) = (ky as isize - p, kx as isize - p);
            let mut acc = 0.0;
            for y in 0..h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let (x0, x1) = valid_range(w, dx);
                for x in x0..x1 {
                    acc += up[y * w + x] * src[sy as usize * w + (x as isize + dx) as usize];
                }
            }
            g[ky * k + kx] += acc;
        }
    }
}

// Output columns x for which x + dx lies inside [0, w).
#[inline]
fn valid_range(w: usize, dx: isize) -> (usize, usize) {
    let lo = (-dx).max(0) as usize;
    let hi = (w as isize - dx).clamp(0, w as isize) as usize;
    (lo.min(hi), hi)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn channel_sums(t: &Tensor) -> Vec<f64> {
    let s = t.shape();
    (0..s.c)
        .map(|c| (0..s.n).map(|n| t.plane(n, c).iter().sum::<f64>()).sum())
        .collect()
}

/// Softmax over consecutive groups of `m` values.
pub fn softmax_lastaxis(values: &[f64], m: usize) -> Result<Vec<f64>> {
    if m == 0 || !values.len().is_multiple_of(m) {
        return Err(Error::dimension(
            "softmax_lastaxis",
            format!("a multiple of group length {m}"),
            values.len(),
        ));
    }
    let mut out = values.to_vec();
    for group in out.chunks_mut(m) {
        softmax_in_place(group);
    }
    Ok(out)
}

#[inline]
pub(crate) fn softmax_in_place(group: &mut [f64]) {
    let max = group.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in group.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in group.iter_mut() {
        *v /= total;
    }
}

/// Gradient of the logits given the softmax output and the upstream gradient.
pub fn softmax_backward(output: &[f64], upstream: &[f64], m: usize) -> Result<Vec<f64>> {
    if m == 0 || !output.len().is_multiple_of(m) || upstream.len() != output.len() {
        return Err(Error::dimension(
            "softmax_backward",
            output.len(),
            upstream.len(),
        ));
    }
    let mut grad = vec![0.0; output.len()];
    for ((g, y), u) in grad
        .chunks_mut(m)
        .zip(output.chunks(m))
        .zip(upstream.chunks(m))
    {
        let inner: f64 = y.iter().zip(u).map(|(a, b)| a * b).sum();
        for j in 0..m {
            g[j] = y[j] * (u[j] - inner);
        }
    }
    Ok(grad)
}

/// `theta * tanh(x)`, bounding every element to `[-theta, theta]`.
pub fn tanh_scale(x: &Tensor, theta: f64) -> Result<Tensor> {
    check_theta(theta)?;
    Ok(x.map(|v| theta * v.tanh()))
}

pub fn tanh_scale_backward(x: &Tensor, theta: f64, upstream: &Tensor) -> Result<Tensor> {
    check_theta(theta)?;
    x.zip_map(upstream, |v, u| {
        let t = v.tanh();
        u * theta * (1.0 - t * t)
    })
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::config(format!(
            "theta must be positive, got {theta}"
        )));
    }
    Ok(())
}

/// Input tensor of the given shape filled from `f(n, c, y, x)`.
pub fn tensor_from_fn(shape: Shape, f: impl Fn(usize, usize, usize, usize) -> f64) -> Tensor {
    let mut data = Vec::with_capacity(shape.numel());
    for n in 0..shape.n {
        for c in 0..shape.c {
            for y in 0..shape.h {
                for x in 0..shape.w {
                    data.push(f(n, c, y, x));
                }
            }
        }
    }
    Tensor::from_vec(shape, data).expect("shape and generated data agree")
}
