use super::config::{UpsampleConfig, ValueProjection};
use crate::error::{Error, Result};
use crate::tensor::{ConvKernel, DepthwiseKernel, Matrix, Rng};

/// Learnable parameters of the attention upsamplers.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaAquWeights {
    pub channels: usize,
    /// `(C/r) x C`
    pub w_q: Matrix,
    pub b_q: Option<Vec<f64>>,
    /// `(C/r) x C`
    pub w_k: Matrix,
    pub b_k: Option<Vec<f64>>,
    /// `C x C`, present only for learned values.
    pub w_v: Option<Matrix>,
    /// 3x3 depthwise filter over the upsampled queries.
    pub dw_kernel: DepthwiseKernel,
    /// `(2 g k_u^2) x (C/r) x k_e x k_e`
    pub offset_conv: ConvKernel,
    pub offset_bias: Option<Vec<f64>>,
}

/// Initialization recipe for [`init_weights`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum InitScheme {
    /// Glorot-uniform projections and depthwise filter; the offset predictor
    /// starts at zero so no deformation happens until it is trained.
    #[default]
    XavierUniform,
    /// As `XavierUniform`, but the offset predictor's weights and bias are
    /// drawn from `uniform(-bound, bound)`.
    RandomOffsets { bound: f64 },
}

pub const DW_KERNEL: usize = 3;

fn glorot(rng: &mut Rng, len: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    rng.uniform_vec(len, -a, a)
}

pub fn init_weights(
    config: &UpsampleConfig,
    channels: usize,
    rng: &mut Rng,
    scheme: InitScheme,
) -> Result<LdaAquWeights> {
    config.validate_for(channels)?;
    let qk = config.qk_channels(channels);
    let w_q = Matrix::from_vec(qk, channels, glorot(rng, qk * channels, channels, qk))?;
    let w_k = Matrix::from_vec(qk, channels, glorot(rng, qk * channels, channels, qk))?;
    let w_v = match config.value_projection {
        ValueProjection::Identity => None,
        ValueProjection::Learned => Some(Matrix::from_vec(
            channels,
            channels,
            glorot(rng, channels * channels, channels, channels),
        )?),
    };
    let taps = DW_KERNEL * DW_KERNEL;
    let dw_kernel = DepthwiseKernel {
        channels: qk,
        k: DW_KERNEL,
        data: glorot(rng, qk * taps, taps, taps),
    };
    let mut offset_conv = ConvKernel::zeros(config.offset_channels(), qk, config.k_e);
    let mut offset_bias = config
        .offset_bias
        .then(|| vec![0.0; config.offset_channels()]);
    if let InitScheme::RandomOffsets { bound } = scheme {
        offset_conv.data = rng.uniform_vec(offset_conv.data.len(), -bound, bound);
        if let Some(b) = offset_bias.as_mut() {
            *b = rng.uniform_vec(b.len(), -bound, bound);
        }
    }
    Ok(LdaAquWeights {
        channels,
        w_q,
        b_q: config.qk_bias.then(|| vec![0.0; qk]),
        w_k,
        b_k: config.qk_bias.then(|| vec![0.0; qk]),
        w_v,
        dw_kernel,
        offset_conv,
        offset_bias,
    })
}

impl LdaAquWeights {
    /// Checks that every parameter has the shape `config` implies.
    pub fn validate(&self, config: &UpsampleConfig) -> Result<()> {
        let c = self.channels;
        config.validate_for(c)?;
        let qk = config.qk_channels(c);
        let mismatch = |what: &str, expected: String, actual: String| {
            Err(Error::config(format!(
                "{what}: expected {expected}, got {actual}"
            )))
        };
        for (name, m) in [("w_q", &self.w_q), ("w_k", &self.w_k)] {
            if (m.rows, m.cols) != (qk, c) {
                return mismatch(name, format!("{qk}x{c}"), format!("{}x{}", m.rows, m.cols));
            }
        }
        for (name, b) in [("b_q", &self.b_q), ("b_k", &self.b_k)] {
            match (b, config.qk_bias) {
                (Some(b), true) if b.len() == qk => {}
                (None, false) => {}
                _ => {
                    return mismatch(
                        name,
                        format!("qk_bias={}", config.qk_bias),
                        format!("{:?}", b.as_ref().map(Vec::len)),
                    )
                }
            }
        }
        match (&self.w_v, config.value_projection) {
            (None, ValueProjection::Identity) => {}
            (Some(m), ValueProjection::Learned) if (m.rows, m.cols) == (c, c) => {}
            (w, vp) => {
                return mismatch(
                    "w_v",
                    format!("{vp:?}"),
                    format!("{:?}", w.as_ref().map(|m| (m.rows, m.cols))),
                )
            }
        }
        if self.dw_kernel.channels != qk || self.dw_kernel.k != DW_KERNEL {
            return mismatch(
                "dw_kernel",
                format!("{qk} channels of {DW_KERNEL}x{DW_KERNEL}"),
                format!(
                    "{} channels of {}x{}",
                    self.dw_kernel.channels, self.dw_kernel.k, self.dw_kernel.k
                ),
            );
        }
        let oc = &self.offset_conv;
        if (oc.out_channels, oc.in_channels, oc.k) != (config.offset_channels(), qk, config.k_e) {
            return mismatch(
                "offset_conv",
                format!(
                    "{}x{qk}x{}x{}",
                    config.offset_channels(),
                    config.k_e,
                    config.k_e
                ),
                format!("{}x{}x{}x{}", oc.out_channels, oc.in_channels, oc.k, oc.k),
            );
        }
        match (&self.offset_bias, config.offset_bias) {
            (Some(b), true) if b.len() == config.offset_channels() => {}
            (None, false) => {}
            (b, _) => {
                return mismatch(
                    "offset_bias",
                    format!("offset_bias={}", config.offset_bias),
                    format!("{:?}", b.as_ref().map(Vec::len)),
                )
            }
        }
        Ok(())
    }

    /// Same layout, every value zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, p) in z.params_mut() {
            p.fill(0.0);
        }
        z
    }

    /// Named views of every present parameter, in a fixed order.
    pub fn params(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = vec![("w_q", &self.w_q.data)];
        if let Some(b) = &self.b_q {
            out.push(("b_q", b));
        }
        out.push(("w_k", &self.w_k.data));
        if let Some(b) = &self.b_k {
            out.push(("b_k", b));
        }
        if let Some(w) = &self.w_v {
            out.push(("w_v", &w.data));
        }
        out.push(("dw_kernel", &self.dw_kernel.data));
        out.push(("offset_conv", &self.offset_conv.data));
        if let Some(b) = &self.offset_bias {
            out.push(("offset_bias", b));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, &mut [f64])> = vec![("w_q", &mut self.w_q.data)];
        if let Some(b) = &mut self.b_q {
            out.push(("b_q", b));
        }
        out.push(("w_k", &mut self.w_k.data));
        if let Some(b) = &mut self.b_k {
            out.push(("b_k", b));
        }
        if let Some(w) = &mut self.w_v {
            out.push(("w_v", &mut w.data));
        }
        out.push(("dw_kernel", &mut self.dw_kernel.data));
        out.push(("offset_conv", &mut self.offset_conv.data));
        if let Some(b) = &mut self.offset_bias {
            out.push(("offset_bias", b));
        }
        out
    }

    pub fn param(&self, name: &str) -> Option<&[f64]> {
        self.params()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, p)| p)
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    /// `self += scale * other`, parameter by parameter.
    pub fn axpy(&mut self, scale: f64, other: &LdaAquWeights) -> Result<()> {
        let src = other.params();
        let mut dst = self.params_mut();
        if src.len() != dst.len() {
            return Err(Error::config("axpy: parameter sets differ"));
        }
        for ((name, d), (other_name, s)) in dst.iter_mut().zip(&src) {
            if name != other_name || d.len() != s.len() {
                return Err(Error::config(format!("axpy: {name} vs {other_name}")));
            }
            for (a, b) in d.iter_mut().zip(s.iter()) {
                *a += scale * b;
            }
        }
        Ok(())
    }
}
