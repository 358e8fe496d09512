//! Slow scalar-loop reference implementations and the closed-form FLOP model.
//!
//! Nothing here shares code with the vectorized operators beyond the tensor
//! and weight containers: projection, interpolation weights, convolutions
//! and softmax are all re-derived with plain loops. Single-threaded.

use crate::error::{Error, Result};
use crate::geometry::{PaddingMode, ProjectionMode};
use crate::tensor::{Shape, Tensor};
use crate::upsamplers::{
    AggregationOverride, LdaAquWeights, QueryUpsample, UpsampleConfig, ValueProjection,
};

/// Operation counts, multiply-accumulate counted as two.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlopsBreakdown {
    pub projection: f64,
    pub interaction: f64,
    pub offset_prediction: f64,
    pub total: f64,
}

/// `2HWC^2 + 2 a^2 k_u^2 HWC + 2 a^2 k_u^2 k_e^2 HWC`.
///
/// Query upsampling, the depthwise filter and the softmax are not counted.
pub fn flops(config: &UpsampleConfig, h: usize, w: usize, c: usize) -> FlopsBreakdown {
    let hwc = (h * w * c) as f64;
    let a2 = config.alpha * config.alpha;
    let ku2 = (config.k_u * config.k_u) as f64;
    let ke2 = (config.k_e * config.k_e) as f64;
    let projection = 2.0 * hwc * c as f64;
    let interaction = 2.0 * a2 * ku2 * hwc;
    let offset_prediction = 2.0 * a2 * ku2 * ke2 * hwc;
    FlopsBreakdown {
        projection,
        interaction,
        offset_prediction,
        total: projection + interaction + offset_prediction,
    }
}

fn out_extent(extent: usize, alpha: f64) -> usize {
    (alpha * extent as f64 + 1e-9).floor() as usize
}

// Projected coordinate of output index `i` along an axis.
fn psi(i: usize, extent: usize, out: usize, mode: ProjectionMode) -> f64 {
    let numerator = match mode {
        ProjectionMode::PaperExact => extent as f64,
        ProjectionMode::AlignCorners => extent as f64 - 1.0,
    };
    i as f64 * numerator / (out as f64 - 1.0)
}

fn hat(a: f64, b: f64) -> f64 {
    (1.0 - (a - b).abs()).max(0.0)
}

/// Bilinear read of `value(sx, sy)` at `(x, y)` on an `h x w` domain.
fn interp(
    x: f64,
    y: f64,
    h: usize,
    w: usize,
    padding: PaddingMode,
    value: impl Fn(usize, usize) -> f64,
) -> f64 {
    let (x, y) = match padding {
        PaddingMode::Zeros => (x, y),
        PaddingMode::Border => (x.clamp(0.0, w as f64 - 1.0), y.clamp(0.0, h as f64 - 1.0)),
    };
    let (fx, fy) = (x.floor(), y.floor());
    let mut acc = 0.0;
    for sy in [fy, fy + 1.0] {
        for sx in [fx, fx + 1.0] {
            if sx < 0.0 || sy < 0.0 || sx > w as f64 - 1.0 || sy > h as f64 - 1.0 {
                continue;
            }
            let weight = hat(x, sx) * hat(y, sy);
            if weight != 0.0 {
                acc += weight * value(sx as usize, sy as usize);
            }
        }
    }
    acc
}

fn nearest(v: f64, extent: usize) -> usize {
    // Smallest index among those closest to v, restricted to the domain.
    let mut best = 0;
    for i in 1..extent {
        if (i as f64 - v).abs() < (best as f64 - v).abs() {
            best = i;
        }
    }
    best
}

fn check_geometry(s: Shape, alpha: f64) -> Result<(usize, usize)> {
    let (oh, ow) = (out_extent(s.h, alpha), out_extent(s.w, alpha));
    if !alpha.is_finite() || alpha <= 1.0 || oh < 2 || ow < 2 {
        return Err(Error::config("oracle: degenerate scale"));
    }
    Ok((oh, ow))
}

pub fn naive_bilinear(
    x: &Tensor,
    alpha: f64,
    mode: ProjectionMode,
    padding: PaddingMode,
) -> Result<Tensor> {
    let s = x.shape();
    let (oh, ow) = check_geometry(s, alpha)?;
    let mut out = Vec::with_capacity(s.n * s.c * oh * ow);
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let px = psi(ox, s.w, ow, mode);
                    let py = psi(oy, s.h, oh, mode);
                    out.push(interp(px, py, s.h, s.w, padding, |sx, sy| {
                        x.at(n, c, sy, sx)
                    }));
                }
            }
        }
    }
    Tensor::from_vec(s.with_spatial(oh, ow), out)
}

pub fn naive_nearest(x: &Tensor, alpha: f64, mode: ProjectionMode) -> Result<Tensor> {
    let s = x.shape();
    let (oh, ow) = check_geometry(s, alpha)?;
    let mut out = Vec::with_capacity(s.n * s.c * oh * ow);
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let sx = nearest(psi(ox, s.w, ow, mode), s.w);
                    let sy = nearest(psi(oy, s.h, oh, mode), s.h);
                    out.push(x.at(n, c, sy, sx));
                }
            }
        }
    }
    Tensor::from_vec(s.with_spatial(oh, ow), out)
}

/// Uniform-stencil attention upsampling by direct evaluation.
pub fn naive_la_aqu(
    x: &Tensor,
    weights: &LdaAquWeights,
    config: &UpsampleConfig,
) -> Result<Tensor> {
    naive_attention(x, weights, config, false)
}

/// Deformable attention upsampling by direct evaluation, including a scalar
/// evaluation of the offset predictor.
pub fn naive_lda_aqu(
    x: &Tensor,
    weights: &LdaAquWeights,
    config: &UpsampleConfig,
) -> Result<Tensor> {
    naive_attention(x, weights, config, true)
}

struct Projector<'a> {
    x: &'a Tensor,
    weights: &'a LdaAquWeights,
    config: &'a UpsampleConfig,
}

impl Projector<'_> {
    fn query(&self, n: usize, o: usize, sx: usize, sy: usize) -> f64 {
        let mut acc = self.weights.b_q.as_ref().map_or(0.0, |b| b[o]);
        for i in 0..self.weights.channels {
            acc += self.weights.w_q.get(o, i) * self.x.at(n, i, sy, sx);
        }
        acc
    }

    fn key(&self, n: usize, o: usize, sx: usize, sy: usize) -> f64 {
        let mut acc = self.weights.b_k.as_ref().map_or(0.0, |b| b[o]);
        for i in 0..self.weights.channels {
            acc += self.weights.w_k.get(o, i) * self.x.at(n, i, sy, sx);
        }
        acc
    }

    fn value(&self, n: usize, o: usize, sx: usize, sy: usize) -> f64 {
        match (self.config.value_projection, &self.weights.w_v) {
            (ValueProjection::Learned, Some(w_v)) => {
                let mut acc = 0.0;
                for i in 0..self.weights.channels {
                    acc += w_v.get(o, i) * self.x.at(n, i, sy, sx);
                }
                acc
            }
            _ => self.x.at(n, o, sy, sx),
        }
    }
}

fn naive_attention(
    x: &Tensor,
    weights: &LdaAquWeights,
    config: &UpsampleConfig,
    deform: bool,
) -> Result<Tensor> {
    if config.aggregation != AggregationOverride::None {
        return Err(Error::config("oracle does not model aggregation overrides"));
    }
    weights.validate(config)?;
    let s = x.shape();
    if s.c != weights.channels {
        return Err(Error::config("oracle: channel mismatch"));
    }
    let (oh, ow) = check_geometry(s, config.alpha)?;
    let c = s.c;
    let cq = c / config.reduction;
    let g_count = config.groups;
    let dk = cq / g_count;
    let cv = c / g_count;
    let half = (config.k_u / 2) as i64;
    let pts = config.k_u * config.k_u;
    let mode = config.projection_mode;
    let padding = config.padding;
    let pr = Projector { x, weights, config };

    // Upsampled queries at every output pixel: [n][cq][oy][ox].
    let mut q_up = vec![0.0; s.n * cq * oh * ow];
    for n in 0..s.n {
        for o in 0..cq {
            for oy in 0..oh {
                for ox in 0..ow {
                    let px = psi(ox, s.w, ow, mode);
                    let py = psi(oy, s.h, oh, mode);
                    let val = match config.query_upsample {
                        QueryUpsample::Bilinear => {
                            interp(px, py, s.h, s.w, padding, |sx, sy| pr.query(n, o, sx, sy))
                        }
                        QueryUpsample::Nearest => {
                            pr.query(n, o, nearest(px, s.w), nearest(py, s.h))
                        }
                    };
                    q_up[((n * cq + o) * oh + oy) * ow + ox] = val;
                }
            }
        }
    }
    let q_at = |n: usize, o: usize, oy: usize, ox: usize| q_up[((n * cq + o) * oh + oy) * ow + ox];

    // Offsets: [n][oy][ox][g][j] -> (dx, dy).
    let mut offsets = vec![[0.0f64; 2]; s.n * oh * ow * g_count * pts];
    if deform {
        let dw = &weights.dw_kernel;
        let mut dw_out = vec![0.0; s.n * cq * oh * ow];
        for n in 0..s.n {
            for ch in 0..cq {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ky in 0..dw.k {
                            for kx in 0..dw.k {
                                let yy = oy as i64 + ky as i64 - (dw.k / 2) as i64;
                                let xx = ox as i64 + kx as i64 - (dw.k / 2) as i64;
                                if yy < 0 || xx < 0 || yy >= oh as i64 || xx >= ow as i64 {
                                    continue;
                                }
                                acc += dw.data[(ch * dw.k + ky) * dw.k + kx]
                                    * q_at(n, ch, yy as usize, xx as usize);
                            }
                        }
                        dw_out[((n * cq + ch) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        let conv = &weights.offset_conv;
        let ke = conv.k as i64;
        for n in 0..s.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for oc in 0..conv.out_channels {
                        let mut acc = weights.offset_bias.as_ref().map_or(0.0, |b| b[oc]);
                        for ic in 0..cq {
                            for ky in 0..ke {
                                for kx in 0..ke {
                                    let yy = oy as i64 + ky - ke / 2;
                                    let xx = ox as i64 + kx - ke / 2;
                                    if yy < 0 || xx < 0 || yy >= oh as i64 || xx >= ow as i64 {
                                        continue;
                                    }
                                    acc += conv.get(oc, ic, ky as usize, kx as usize)
                                        * dw_out
                                            [((n * cq + ic) * oh + yy as usize) * ow + xx as usize];
                                }
                            }
                        }
                        let value = config.theta * acc.tanh();
                        let (pair, axis) = (oc / 2, oc % 2);
                        offsets[((n * oh + oy) * ow + ox) * g_count * pts + pair][axis] = value;
                    }
                }
            }
        }
    }

    let mut out = vec![0.0; s.n * c * oh * ow];
    for n in 0..s.n {
        for oy in 0..oh {
            for ox in 0..ow {
                let px = psi(ox, s.w, ow, mode);
                let py = psi(oy, s.h, oh, mode);
                for g in 0..g_count {
                    let mut sample_points = Vec::with_capacity(pts);
                    let mut j = 0;
                    for dy in -half..=half {
                        for dx in -half..=half {
                            let off =
                                offsets[((n * oh + oy) * ow + ox) * g_count * pts + g * pts + j];
                            sample_points.push((px + dx as f64 + off[0], py + dy as f64 + off[1]));
                            j += 1;
                        }
                    }
                    let mut logits = Vec::with_capacity(pts);
                    for &(sx, sy) in &sample_points {
                        let mut dot = 0.0;
                        for d in 0..dk {
                            let ch = g * dk + d;
                            let key = interp(sx, sy, s.h, s.w, padding, |a, b| pr.key(n, ch, a, b));
                            dot += q_at(n, ch, oy, ox) * key;
                        }
                        logits.push(dot / (dk as f64).sqrt());
                    }
                    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                    let z: f64 = exps.iter().sum();
                    for ci in 0..cv {
                        let ch = g * cv + ci;
                        let mut acc = 0.0;
                        for (e, &(sx, sy)) in exps.iter().zip(&sample_points) {
                            let val =
                                interp(sx, sy, s.h, s.w, padding, |a, b| pr.value(n, ch, a, b));
                            acc += e / z * val;
                        }
                        out[((n * c + ch) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
    }
    Tensor::from_vec(s.with_spatial(oh, ow), out)
}
