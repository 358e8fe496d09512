//! Fixed-kernel upsamplers: nearest neighbor and bilinear.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{PaddingMode, Projection, ProjectionMode, Taps};
use crate::tensor::{Shape, Tensor};

/// Index of the pixel nearest to `v`, ties toward the smaller index, clamped
/// into `[0, extent)`.
#[inline]
pub(crate) fn nearest_index(v: f64, extent: usize) -> usize {
    let i = (v - 0.5).ceil();
    if i <= 0.0 {
        0
    } else {
        (i as usize).min(extent - 1)
    }
}

pub fn nearest_upsample(x: &Tensor, alpha: f64, mode: ProjectionMode) -> Result<Tensor> {
    let s = x.shape();
    let proj = Projection::new(s.h, s.w, alpha, mode)?;
    resample_nearest(x, &proj)
}

pub fn bilinear_upsample(
    x: &Tensor,
    alpha: f64,
    mode: ProjectionMode,
    padding: PaddingMode,
) -> Result<Tensor> {
    let s = x.shape();
    let proj = Projection::new(s.h, s.w, alpha, mode)?;
    resample_bilinear(x, &proj, padding)
}

/// Adjoint of [`nearest_upsample`] with respect to its input.
pub fn nearest_upsample_backward(
    in_shape: Shape,
    alpha: f64,
    mode: ProjectionMode,
    upstream: &Tensor,
) -> Result<Tensor> {
    let proj = Projection::new(in_shape.h, in_shape.w, alpha, mode)?;
    resample_nearest_backward(in_shape, &proj, upstream)
}

/// Adjoint of [`bilinear_upsample`] with respect to its input.
pub fn bilinear_upsample_backward(
    in_shape: Shape,
    alpha: f64,
    mode: ProjectionMode,
    padding: PaddingMode,
    upstream: &Tensor,
) -> Result<Tensor> {
    let proj = Projection::new(in_shape.h, in_shape.w, alpha, mode)?;
    resample_bilinear_backward(in_shape, &proj, padding, upstream)
}

fn nearest_sources(proj: &Projection) -> Vec<usize> {
    let mut src = Vec::with_capacity(proj.out_h * proj.out_w);
    for y in 0..proj.out_h {
        for x in 0..proj.out_w {
            let p = proj.apply(x, y);
            src.push(nearest_index(p[1], proj.in_h) * proj.in_w + nearest_index(p[0], proj.in_w));
        }
    }
    src
}

fn pixel_taps(proj: &Projection, padding: PaddingMode) -> Vec<Taps> {
    proj.reference_points()
        .into_iter()
        .map(|p| Taps::new(p, proj.in_h, proj.in_w, padding))
        .collect()
}

fn check_input(x: Shape, proj: &Projection) -> Result<()> {
    if (x.h, x.w) != (proj.in_h, proj.in_w) {
        return Err(Error::dimension(
            "resample",
            (proj.in_h, proj.in_w),
            (x.h, x.w),
        ));
    }
    Ok(())
}

pub(crate) fn resample_nearest(x: &Tensor, proj: &Projection) -> Result<Tensor> {
    let s = x.shape();
    check_input(s, proj)?;
    let src = nearest_sources(proj);
    let out_shape = s.with_spatial(proj.out_h, proj.out_w);
    let mut out = vec![0.0; out_shape.numel()];
    out.par_chunks_mut(out_shape.plane())
        .enumerate()
        .for_each(|(idx, dst)| {
            let plane = x.plane(idx / s.c, idx % s.c);
            for (d, &i) in dst.iter_mut().zip(&src) {
                *d = plane[i];
            }
        });
    Tensor::from_vec(out_shape, out)
}

pub(crate) fn resample_nearest_backward(
    in_shape: Shape,
    proj: &Projection,
    upstream: &Tensor,
) -> Result<Tensor> {
    check_input(in_shape, proj)?;
    let expected = in_shape.with_spatial(proj.out_h, proj.out_w);
    if upstream.shape() != expected {
        return Err(Error::dimension(
            "nearest_upsample_backward",
            expected,
            upstream.shape(),
        ));
    }
    let src = nearest_sources(proj);
    let mut grad = vec![0.0; in_shape.numel()];
    grad.par_chunks_mut(in_shape.plane())
        .enumerate()
        .for_each(|(idx, dst)| {
            let up = upstream.plane(idx / in_shape.c, idx % in_shape.c);
            for (&u, &i) in up.iter().zip(&src) {
                dst[i] += u;
            }
        });
    Tensor::from_vec(in_shape, grad)
}

pub(crate) fn resample_bilinear(
    x: &Tensor,
    proj: &Projection,
    padding: PaddingMode,
) -> Result<Tensor> {
    let s = x.shape();
    check_input(s, proj)?;
    let taps = pixel_taps(proj, padding);
    let out_shape = s.with_spatial(proj.out_h, proj.out_w);
    let mut out = vec![0.0; out_shape.numel()];
    out.par_chunks_mut(out_shape.plane())
        .enumerate()
        .for_each(|(idx, dst)| {
            let plane = x.plane(idx / s.c, idx % s.c);
            for (d, t) in dst.iter_mut().zip(&taps) {
                *d = t.read(plane);
            }
        });
    Tensor::from_vec(out_shape, out)
}

pub(crate) fn resample_bilinear_backward(
    in_shape: Shape,
    proj: &Projection,
    padding: PaddingMode,
    upstream: &Tensor,
) -> Result<Tensor> {
    check_input(in_shape, proj)?;
    let expected = in_shape.with_spatial(proj.out_h, proj.out_w);
    if upstream.shape() != expected {
        return Err(Error::dimension(
            "bilinear_upsample_backward",
            expected,
            upstream.shape(),
        ));
    }
    let taps = pixel_taps(proj, padding);
    let mut grad = vec![0.0; in_shape.numel()];
    grad.par_chunks_mut(in_shape.plane())
        .enumerate()
        .for_each(|(idx, dst)| {
            let up = upstream.plane(idx / in_shape.c, idx % in_shape.c);
            for (&u, t) in up.iter().zip(&taps) {
                t.scatter(dst, u);
            }
        });
    Tensor::from_vec(in_shape, grad)
}
