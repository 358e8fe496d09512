//! Local (deformable) attention upsampling.
//!
//! For every output pixel the upsampled query attends over `k_u^2` points
//! around its projected reference location. Keys and values are read at those
//! points with bilinear sampling. In the deformable variant each offset group
//! shifts its points by offsets predicted from the queries, bounded to
//! `[-theta, theta]`.

use rayon::prelude::*;

use super::baseline::{nearest_index, resample_bilinear, resample_nearest};
use super::config::{AggregationOverride, QueryUpsample, UpsampleConfig, ValueProjection};
use super::weights::LdaAquWeights;
use crate::error::{Error, Result};
use crate::geometry::{CoordGrid, Point, Projection, Taps};
use crate::tensor::{self, softmax_in_place, Tensor};

/// Result of a deformable upsampling pass.
#[derive(Debug, Clone)]
pub struct LdaAquOutput {
    pub y: Tensor,
    pub grid: CoordGrid,
    /// Softmax weights indexed like `grid.delta_r`: `[batch][pixel][group][point]`.
    pub attention: Vec<f64>,
}

/// Offsets plus the intermediates the backward pass needs.
#[derive(Debug, Clone)]
pub struct OffsetPrediction {
    /// Depthwise-filtered queries.
    pub dw_out: Tensor,
    /// Pre-activation offsets, channel `(g * k_u^2 + j) * 2 + axis`.
    pub logits: Tensor,
    /// `[batch][pixel][group][point]` offsets in input pixels.
    pub delta_r: Vec<Point>,
}

/// Predicts per-group stencil offsets from upsampled queries:
/// depthwise 3x3, then a `k_e x k_e` convolution, then `theta * tanh`.
pub fn predict_offsets(
    q_up: &Tensor,
    weights: &LdaAquWeights,
    config: &UpsampleConfig,
) -> Result<OffsetPrediction> {
    let qk = config.qk_channels(weights.channels);
    if q_up.shape().c != qk {
        return Err(Error::dimension("predict_offsets", qk, q_up.shape().c));
    }
    let dw_out = tensor::depthwise_conv(q_up, &weights.dw_kernel, None)?;
    let logits = tensor::conv2d(
        &dw_out,
        &weights.offset_conv,
        weights.offset_bias.as_deref(),
    )?;
    let scaled = tensor::tanh_scale(&logits, config.theta)?;
    let delta_r = offsets_from_channels(&scaled);
    Ok(OffsetPrediction {
        dw_out,
        logits,
        delta_r,
    })
}

// Channel-major (n, 2*g*P, h, w) to pixel-major [n][pix][g][j] points.
fn offsets_from_channels(t: &Tensor) -> Vec<Point> {
    let s = t.shape();
    let pixels = s.plane();
    let pairs = s.c / 2;
    let mut out = vec![[0.0; 2]; s.n * pixels * pairs];
    for n in 0..s.n {
        for pair in 0..pairs {
            let xs = t.plane(n, 2 * pair);
            let ys = t.plane(n, 2 * pair + 1);
            for pix in 0..pixels {
                out[(n * pixels + pix) * pairs + pair] = [xs[pix], ys[pix]];
            }
        }
    }
    out
}

pub(crate) fn channels_from_offsets(points: &[Point], shape: tensor::Shape) -> Tensor {
    let pixels = shape.plane();
    let pairs = shape.c / 2;
    let mut data = vec![0.0; shape.numel()];
    for n in 0..shape.n {
        for pair in 0..pairs {
            for pix in 0..pixels {
                let p = points[(n * pixels + pix) * pairs + pair];
                data[((n * shape.c) + 2 * pair) * pixels + pix] = p[0];
                data[((n * shape.c) + 2 * pair + 1) * pixels + pix] = p[1];
            }
        }
    }
    Tensor::from_vec(shape, data).expect("offset layout matches shape")
}

/// Everything computed on the way to the output.
#[derive(Debug, Clone)]
pub(crate) struct ForwardState {
    pub proj: Projection,
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
    pub q_up: Tensor,
    pub offsets: Option<OffsetPrediction>,
    pub grid: CoordGrid,
    pub attention: Vec<f64>,
    pub y: Tensor,
}

pub(crate) fn upsample_queries(
    q: &Tensor,
    proj: &Projection,
    config: &UpsampleConfig,
) -> Result<Tensor> {
    match config.query_upsample {
        QueryUpsample::Bilinear => resample_bilinear(q, proj, config.padding),
        QueryUpsample::Nearest => resample_nearest(q, proj),
    }
}

pub(crate) fn forward_state(
    x: &Tensor,
    weights: &LdaAquWeights,
    config: &UpsampleConfig,
    deform: bool,
) -> Result<ForwardState> {
    let s = x.shape();
    if s.c != weights.channels {
        return Err(Error::config(format!(
            "input has {} channels, weights expect {}",
            s.c, weights.channels
        )));
    }
    weights.validate(config)?;
    let proj = Projection::new(s.h, s.w, config.alpha, config.projection_mode)?;

    let q = tensor::linear_project(x, &weights.w_q, weights.b_q.as_deref())?;
    let k = tensor::linear_project(x, &weights.w_k, weights.b_k.as_deref())?;
    let v = match (&weights.w_v, config.value_projection) {
        (Some(w_v), ValueProjection::Learned) => tensor::linear_project(x, w_v, None)?,
        _ => x.clone(),
    };
    let q_up = upsample_queries(&q, &proj, config)?;

    let mut grid = CoordGrid::uniform(&proj, config.k_u, s.n, config.groups)?;
    let offsets = if deform {
        let pred = predict_offsets(&q_up, weights, config)?;
        grid.delta_r.clone_from(&pred.delta_r);
        grid.r_prime = grid.deform();
        Some(pred)
    } else {
        None
    };

    let (y, attention) = aggregate(&q_up, &k, &v, &grid, config)?;
    debug_assert!(invariants_hold(&grid, &attention, config.theta));
    Ok(ForwardState {
        proj,
        q,
        k,
        v,
        q_up,
        offsets,
        grid,
        attention,
        y,
    })
}

/// Weights per pixel and group sum to one; offsets stay within `theta`.
pub(crate) fn invariants_hold(grid: &CoordGrid, attention: &[f64], theta: f64) -> bool {
    let normalized = attention
        .chunks(grid.points)
        .all(|w| (w.iter().sum::<f64>() - 1.0).abs() <= 1e-12 && w.iter().all(|&a| a >= 0.0));
    normalized && grid.max_abs_offset() <= theta
}

/// Attention over the stencil points recorded in `grid.r_prime`.
fn aggregate(
    q_up: &Tensor,
    k: &Tensor,
    v: &Tensor,
    grid: &CoordGrid,
    config: &UpsampleConfig,
) -> Result<(Tensor, Vec<f64>)> {
    let (n, c) = (v.shape().n, v.shape().c);
    let (h, w) = (k.shape().h, k.shape().w);
    let groups = grid.groups;
    let points = grid.points;
    let pixels = grid.pixels();
    let dk = q_up.shape().c / groups;
    let cv = c / groups;
    let scale = 1.0 / (dk as f64).sqrt();
    let hook = config.aggregation;
    let padding = config.padding;

    // Pixel-major scratch: [n][pix][C] and [n][pix][g][j].
    let mut out_pm = vec![0.0; n * pixels * c];
    let mut attention = vec![0.0; n * pixels * groups * points];
    out_pm
        .par_chunks_mut(c)
        .zip(attention.par_chunks_mut(groups * points))
        .enumerate()
        .for_each(|(idx, (out, attn))| {
            let (b, pix) = (idx / pixels, idx % pixels);
            let mut taps = vec![Taps::new([0.0, 0.0], h, w, padding); points];
            for g in 0..groups {
                let a = &mut attn[g * points..(g + 1) * points];
                for (j, t) in taps.iter_mut().enumerate() {
                    *t = Taps::new(grid.r_prime[grid.slot(b, pix, g, j)], h, w, padding);
                }
                match hook {
                    AggregationOverride::None => {
                        for (j, t) in taps.iter().enumerate() {
                            let mut logit = 0.0;
                            for d in 0..dk {
                                let ch = g * dk + d;
                                logit += q_up.plane(b, ch)[pix] * t.read(k.plane(b, ch));
                            }
                            a[j] = logit * scale;
                        }
                        softmax_in_place(a);
                        for (ci, o) in out[g * cv..(g + 1) * cv].iter_mut().enumerate() {
                            let plane = v.plane(b, g * cv + ci);
                            let mut acc = 0.0;
                            for (j, t) in taps.iter().enumerate() {
                                acc += a[j] * t.read(plane);
                            }
                            *o = acc;
                        }
                    }
                    AggregationOverride::NearestTapOneHot => {
                        let center = points / 2;
                        a.fill(0.0);
                        a[center] = 1.0;
                        let r = grid.r_prime[grid.slot(b, pix, g, center)];
                        let src = nearest_index(r[1], h) * w + nearest_index(r[0], w);
                        for (ci, o) in out[g * cv..(g + 1) * cv].iter_mut().enumerate() {
                            *o = v.plane(b, g * cv + ci)[src];
                        }
                    }
                }
            }
        });

    let shape = v.shape().with_spatial(grid.out_h, grid.out_w);
    Ok((pixel_major_to_nchw(&out_pm, shape), attention))
}

pub(crate) fn pixel_major_to_nchw(data: &[f64], shape: tensor::Shape) -> Tensor {
    let pixels = shape.plane();
    let mut out = vec![0.0; shape.numel()];
    out.par_chunks_mut(pixels)
        .enumerate()
        .for_each(|(idx, dst)| {
            let (b, ch) = (idx / shape.c, idx % shape.c);
            for (pix, d) in dst.iter_mut().enumerate() {
                *d = data[(b * pixels + pix) * shape.c + ch];
            }
        });
    Tensor::from_vec(shape, out).expect("pixel-major layout matches shape")
}

pub(crate) fn nchw_to_pixel_major(t: &Tensor) -> Vec<f64> {
    let s = t.shape();
    let pixels = s.plane();
    let mut out = vec![0.0; s.numel()];
    out.par_chunks_mut(s.c).enumerate().for_each(|(idx, dst)| {
        let (b, pix) = (idx / pixels, idx % pixels);
        for (ch, d) in dst.iter_mut().enumerate() {
            *d = t.plane(b, ch)[pix];
        }
    });
    out
}

/// Deformable local-attention upsampling.
pub fn lda_aqu_upsample(
    x: &Tensor,
    weights: &LdaAquWeights,
    config: &UpsampleConfig,
) -> Result<LdaAquOutput> {
    let state = forward_state(x, weights, config, true)?;
    Ok(LdaAquOutput {
        y: state.y,
        grid: state.grid,
        attention: state.attention,
    })
}

/// Local-attention upsampling over the fixed uniform stencil.
pub fn la_aqu_upsample(
    x: &Tensor,
    weights: &LdaAquWeights,
    config: &UpsampleConfig,
) -> Result<Tensor> {
    Ok(la_aqu_forward(x, weights, config)?.y)
}

/// [`la_aqu_upsample`] returning the grid and attention weights as well.
pub fn la_aqu_forward(
    x: &Tensor,
    weights: &LdaAquWeights,
    config: &UpsampleConfig,
) -> Result<LdaAquOutput> {
    let state = forward_state(x, weights, config, false)?;
    Ok(LdaAquOutput {
        y: state.y,
        grid: state.grid,
        attention: state.attention,
    })
}
