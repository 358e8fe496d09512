//! Nearest, bilinear, local-attention and deformable local-attention
//! upsampling behind one configuration surface.

pub(crate) mod attention;
pub(crate) mod backward;
mod baseline;
mod config;
mod weights;

pub use attention::{
    la_aqu_forward, la_aqu_upsample, lda_aqu_upsample, predict_offsets, LdaAquOutput,
    OffsetPrediction,
};
pub use backward::{la_aqu_backward, lda_aqu_backward, predict_offsets_backward, OffsetGrads};
pub use baseline::{
    bilinear_upsample, bilinear_upsample_backward, nearest_upsample, nearest_upsample_backward,
};
pub use config::{
    AggregationOverride, QueryUpsample, UpsampleConfig, UpsamplerKind, ValueProjection,
};
pub use weights::{init_weights, InitScheme, LdaAquWeights, DW_KERNEL};

use crate::error::Result;
use crate::tensor::Tensor;

/// Runs any of the four upsamplers. `weights` is required for the attention
/// variants and ignored otherwise.
pub fn upsample(
    kind: UpsamplerKind,
    x: &Tensor,
    weights: Option<&LdaAquWeights>,
    config: &UpsampleConfig,
) -> Result<Tensor> {
    let need = || weights.ok_or_else(|| crate::Error::Config(format!("{kind:?} requires weights")));
    match kind {
        UpsamplerKind::Nearest => nearest_upsample(x, config.alpha, config.projection_mode),
        UpsamplerKind::Bilinear => {
            bilinear_upsample(x, config.alpha, config.projection_mode, config.padding)
        }
        UpsamplerKind::LaAqu => la_aqu_upsample(x, need()?, config),
        UpsamplerKind::LdaAqu => Ok(lda_aqu_upsample(x, need()?, config)?.y),
    }
}

#[cfg(test)]
mod tests;
