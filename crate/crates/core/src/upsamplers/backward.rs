use rayon::prelude::*;

use super::attention::{
    channels_from_offsets, forward_state, nchw_to_pixel_major, predict_offsets, ForwardState,
    OffsetPrediction,
};
use super::baseline::{resample_bilinear_backward, resample_nearest_backward};
use super::config::{AggregationOverride, QueryUpsample, UpsampleConfig};
use super::weights::LdaAquWeights;
use crate::error::{Error, Result};
use crate::geometry::{Point, Taps};
use crate::gradcheck::GradBundle;
use crate::tensor::{self, Tensor};

/// Analytic gradients of the deformable upsampler for an upstream gradient
/// `upstream = dL/dy`.
pub fn lda_aqu_backward(
    x: &Tensor,
    weights: &LdaAquWeights,
    config: &UpsampleConfig,
    upstream: &Tensor,
) -> Result<GradBundle> {
    backward(x, weights, config, upstream, true)
}

/// Gradients of the uniform-stencil upsampler. The offset predictor does not
/// take part, so its gradients are zero.
pub fn la_aqu_backward(
    x: &Tensor,
    weights: &LdaAquWeights,
    config: &UpsampleConfig,
    upstream: &Tensor,
) -> Result<GradBundle> {
    backward(x, weights, config, upstream, false)
}

pub(crate) fn backward(
    x: &Tensor,
    weights: &LdaAquWeights,
    config: &UpsampleConfig,
    upstream: &Tensor,
    deform: bool,
) -> Result<GradBundle> {
    if config.aggregation != AggregationOverride::None {
        return Err(Error::config("aggregation overrides are forward-only"));
    }
    let state = forward_state(x, weights, config, deform)?;
    backward_from_state(x, weights, config, &state, upstream)
}

pub(crate) fn backward_from_state(
    x: &Tensor,
    weights: &LdaAquWeights,
    config: &UpsampleConfig,
    state: &ForwardState,
    upstream: &Tensor,
) -> Result<GradBundle> {
    if upstream.shape() != state.y.shape() {
        return Err(Error::dimension(
            "lda_aqu_backward",
            state.y.shape(),
            upstream.shape(),
        ));
    }
    let AttentionGrads {
        d_q_up,
        d_k,
        d_v,
        d_offsets,
    } = attention_backward(state, config, upstream);

    let mut grads = weights.zeros_like();

    let d_q_up = match &state.offsets {
        Some(pred) => {
            let og = offsets_backward_from(&state.q_up, weights, config, pred, &d_offsets)?;
            grads.offset_conv.data = og.grad_offset_conv;
            grads.offset_bias = og.grad_offset_bias;
            grads.dw_kernel.data = og.grad_dw_kernel;
            d_q_up.zip_map(&og.grad_q_up, |a, b| a + b)?
        }
        None => d_q_up,
    };

    let d_q = match config.query_upsample {
        QueryUpsample::Bilinear => {
            resample_bilinear_backward(state.q.shape(), &state.proj, config.padding, &d_q_up)?
        }
        QueryUpsample::Nearest => resample_nearest_backward(state.q.shape(), &state.proj, &d_q_up)?,
    };

    let q_grads = tensor::linear_project_backward(x, &weights.w_q, &d_q, weights.b_q.is_some())?;
    let k_grads = tensor::linear_project_backward(x, &weights.w_k, &d_k, weights.b_k.is_some())?;
    grads.w_q.data = q_grads.grad_weight;
    grads.b_q = q_grads.grad_bias;
    grads.w_k.data = k_grads.grad_weight;
    grads.b_k = k_grads.grad_bias;

    let d_x_v = match &weights.w_v {
        Some(w_v) => {
            let v_grads = tensor::linear_project_backward(x, w_v, &d_v, false)?;
            if let Some(g) = grads.w_v.as_mut() {
                g.data = v_grads.grad_weight;
            }
            v_grads.grad_input
        }
        None => d_v,
    };

    let grad_input = q_grads
        .grad_input
        .zip_map(&k_grads.grad_input, |a, b| a + b)?
        .zip_map(&d_x_v, |a, b| a + b)?;

    Ok(GradBundle {
        grad_input,
        grad_params: grads,
        loss: None,
    })
}

/// Gradients of [`predict_offsets`](super::predict_offsets).
#[derive(Debug, Clone)]
pub struct OffsetGrads {
    pub grad_q_up: Tensor,
    pub grad_dw_kernel: Vec<f64>,
    pub grad_offset_conv: Vec<f64>,
    pub grad_offset_bias: Option<Vec<f64>>,
}

/// Backward pass of the offset predictor; `upstream` is `dL/d(delta_R)` in
/// `[batch][pixel][group][point]` order.
pub fn predict_offsets_backward(
    q_up: &Tensor,
    weights: &LdaAquWeights,
    config: &UpsampleConfig,
    upstream: &[Point],
) -> Result<OffsetGrads> {
    let pred = predict_offsets(q_up, weights, config)?;
    if upstream.len() != pred.delta_r.len() {
        return Err(Error::dimension(
            "predict_offsets_backward",
            pred.delta_r.len(),
            upstream.len(),
        ));
    }
    offsets_backward_from(q_up, weights, config, &pred, upstream)
}

fn offsets_backward_from(
    q_up: &Tensor,
    weights: &LdaAquWeights,
    config: &UpsampleConfig,
    pred: &OffsetPrediction,
    upstream: &[Point],
) -> Result<OffsetGrads> {
    let d_scaled = channels_from_offsets(upstream, pred.logits.shape());
    let d_logits = tensor::tanh_scale_backward(&pred.logits, config.theta, &d_scaled)?;
    let conv = tensor::conv2d_backward(
        &pred.dw_out,
        &weights.offset_conv,
        &d_logits,
        weights.offset_bias.is_some(),
    )?;
    let dw = tensor::depthwise_conv_backward(q_up, &weights.dw_kernel, &conv.grad_input, false)?;
    Ok(OffsetGrads {
        grad_q_up: dw.grad_input,
        grad_dw_kernel: dw.grad_weight,
        grad_offset_conv: conv.grad_weight,
        grad_offset_bias: conv.grad_bias,
    })
}

struct AttentionGrads {
    d_q_up: Tensor,
    d_k: Tensor,
    d_v: Tensor,
    /// `[batch][pixel][group][point]`
    d_offsets: Vec<Point>,
}

// Backpropagates through sampling, softmax and aggregation. Batch items are
// independent and processed in parallel; within an item the pixel loop is
// sequential so every scatter-add has a fixed order.
fn attention_backward(
    state: &ForwardState,
    config: &UpsampleConfig,
    upstream: &Tensor,
) -> AttentionGrads {
    let (k, v, q_up, grid) = (&state.k, &state.v, &state.q_up, &state.grid);
    let n = v.shape().n;
    let c = v.shape().c;
    let (h, w) = (k.shape().h, k.shape().w);
    let plane = h * w;
    let qk = q_up.shape().c;
    let groups = grid.groups;
    let points = grid.points;
    let pixels = grid.pixels();
    let dk = qk / groups;
    let cv = c / groups;
    let scale = 1.0 / (dk as f64).sqrt();
    let padding = config.padding;
    let up_pm = nchw_to_pixel_major(upstream);

    let per_item: Vec<_> = (0..n)
        .into_par_iter()
        .map(|b| {
            let mut d_k = vec![0.0; qk * plane];
            let mut d_v = vec![0.0; c * plane];
            let mut d_q_up = vec![0.0; qk * pixels];
            let mut d_off = vec![[0.0; 2]; pixels * groups * points];
            let mut taps = vec![Taps::new([0.0, 0.0], h, w, padding); points];
            let mut d_attn = vec![0.0; points];

            for pix in 0..pixels {
                let dy = &up_pm[(b * pixels + pix) * c..(b * pixels + pix + 1) * c];
                for g in 0..groups {
                    let base = grid.slot(b, pix, g, 0);
                    let a = &state.attention[base..base + points];
                    let dy_g = &dy[g * cv..(g + 1) * cv];
                    let d_off_g =
                        &mut d_off[(pix * groups + g) * points..(pix * groups + g + 1) * points];
                    for (j, t) in taps.iter_mut().enumerate() {
                        *t = Taps::new(grid.r_prime[base + j], h, w, padding);
                    }

                    // y = sum_j a_j v_j
                    for (j, t) in taps.iter().enumerate() {
                        let mut da = 0.0;
                        let mut dcoord = [0.0; 2];
                        for (ci, &u) in dy_g.iter().enumerate() {
                            let ch = g * cv + ci;
                            let vp = v.plane(b, ch);
                            da += u * t.read(vp);
                            let gr = t.read_grad(vp);
                            dcoord[0] += u * gr[0];
                            dcoord[1] += u * gr[1];
                            t.scatter(&mut d_v[ch * plane..(ch + 1) * plane], a[j] * u);
                        }
                        d_attn[j] = da;
                        d_off_g[j][0] += a[j] * dcoord[0];
                        d_off_g[j][1] += a[j] * dcoord[1];
                    }

                    // softmax
                    let inner: f64 = a.iter().zip(&d_attn).map(|(p, q)| p * q).sum();
                    for (j, t) in taps.iter().enumerate() {
                        let d_logit = a[j] * (d_attn[j] - inner) * scale;
                        if d_logit == 0.0 {
                            continue;
                        }
                        let mut dcoord = [0.0; 2];
                        for d in 0..dk {
                            let ch = g * dk + d;
                            let kp = k.plane(b, ch);
                            let q = q_up.plane(b, ch)[pix];
                            d_q_up[ch * pixels + pix] += d_logit * t.read(kp);
                            t.scatter(&mut d_k[ch * plane..(ch + 1) * plane], d_logit * q);
                            let gr = t.read_grad(kp);
                            dcoord[0] += q * gr[0];
                            dcoord[1] += q * gr[1];
                        }
                        d_off_g[j][0] += d_logit * dcoord[0];
                        d_off_g[j][1] += d_logit * dcoord[1];
                    }
                }
            }
            (d_k, d_v, d_q_up, d_off)
        })
        .collect();

    let mut d_k = Vec::with_capacity(n * qk * plane);
    let mut d_v = Vec::with_capacity(n * c * plane);
    let mut d_q_up = Vec::with_capacity(n * qk * pixels);
    let mut d_offsets = Vec::with_capacity(n * pixels * groups * points);
    for (dk_b, dv_b, dq_b, doff_b) in per_item {
        d_k.extend(dk_b);
        d_v.extend(dv_b);
        d_q_up.extend(dq_b);
        d_offsets.extend(doff_b);
    }
    let wrap = |shape, data| Tensor::from_vec(shape, data).expect("gradient layout matches shape");
    AttentionGrads {
        d_q_up: wrap(q_up.shape(), d_q_up),
        d_k: wrap(k.shape(), d_k),
        d_v: wrap(v.shape(), d_v),
        d_offsets,
    }
}
