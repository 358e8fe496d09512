use crate::error::{Error, Result};
use crate::geometry::{PaddingMode, ProjectionMode};

/// Whether values are the raw input or a learned projection of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ValueProjection {
    #[default]
    Identity,
    Learned,
}

/// How the low-resolution queries are brought to output resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum QueryUpsample {
    #[default]
    Bilinear,
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UpsamplerKind {
    Nearest,
    Bilinear,
    /// Local attention over the uniform stencil.
    LaAqu,
    /// Local attention over the deformed stencil.
    LdaAqu,
}

/// Replaces the learned aggregation, for checking the operator's degenerate
/// cases. Forward only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum AggregationOverride {
    #[default]
    None,
    /// All weight on the center stencil point, and that point reads only its
    /// nearest in-range pixel. Reproduces nearest-neighbor upsampling.
    NearestTapOneHot,
}

/// Hyperparameters shared by all four upsamplers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpsampleConfig {
    /// Spatial scale factor, > 1.
    pub alpha: f64,
    /// Side of the neighbor stencil (odd).
    pub k_u: usize,
    /// Kernel of the offset-predicting convolution (odd).
    pub k_e: usize,
    /// Bound on each offset component, in input pixels.
    pub theta: f64,
    /// Offset groups: channel slices that sample and attend independently.
    pub groups: usize,
    /// Query/key channels are `C / reduction`.
    pub reduction: usize,
    /// Attention heads. Only 1 is supported.
    pub heads: usize,
    pub value_projection: ValueProjection,
    pub projection_mode: ProjectionMode,
    pub padding: PaddingMode,
    pub query_upsample: QueryUpsample,
    /// Bias on the query and key projections.
    pub qk_bias: bool,
    /// Bias on the offset-predicting convolution.
    pub offset_bias: bool,
    pub aggregation: AggregationOverride,
}

impl Default for UpsampleConfig {
    fn default() -> Self {
        UpsampleConfig {
            alpha: 2.0,
            k_u: 3,
            k_e: 3,
            theta: 11.0,
            groups: 2,
            reduction: 4,
            heads: 1,
            value_projection: ValueProjection::Identity,
            projection_mode: ProjectionMode::AlignCorners,
            padding: PaddingMode::Zeros,
            query_upsample: QueryUpsample::Bilinear,
            qk_bias: false,
            offset_bias: true,
            aggregation: AggregationOverride::None,
        }
    }
}

impl UpsampleConfig {
    /// Checks every invariant that does not depend on the channel count.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 1.0) {
            return Err(Error::config(format!(
                "alpha must exceed 1, got {}",
                self.alpha
            )));
        }
        for (name, k) in [("k_u", self.k_u), ("k_e", self.k_e)] {
            if k == 0 || k % 2 == 0 {
                return Err(Error::config(format!("{name} must be odd, got {k}")));
            }
        }
        if !(self.theta.is_finite() && self.theta > 0.0) {
            return Err(Error::config(format!(
                "theta must be positive, got {}",
                self.theta
            )));
        }
        if self.groups == 0 || self.reduction == 0 {
            return Err(Error::config("groups and reduction must be >= 1"));
        }
        if self.heads != 1 {
            return Err(Error::config(format!(
                "only a single head is supported, got {}",
                self.heads
            )));
        }
        Ok(())
    }

    /// Full validation for an input with `channels` channels.
    pub fn validate_for(&self, channels: usize) -> Result<()> {
        self.validate()?;
        if channels == 0 || !channels.is_multiple_of(self.reduction) {
            return Err(Error::config(format!(
                "channels {channels} not divisible by reduction {}",
                self.reduction
            )));
        }
        if !channels.is_multiple_of(self.groups) {
            return Err(Error::config(format!(
                "channels {channels} not divisible by groups {}",
                self.groups
            )));
        }
        let qk = channels / self.reduction;
        if !qk.is_multiple_of(self.groups) {
            return Err(Error::config(format!(
                "query/key width {qk} (= {channels} / {}) not divisible by groups {}",
                self.reduction, self.groups
            )));
        }
        Ok(())
    }

    pub fn qk_channels(&self, channels: usize) -> usize {
        channels / self.reduction
    }

    /// Per-group query/key width, the attention scale's `d_k`.
    pub fn head_dim(&self, channels: usize) -> usize {
        self.qk_channels(channels) / self.groups
    }

    pub fn stencil_points(&self) -> usize {
        self.k_u * self.k_u
    }

    /// Channels produced by the offset-predicting convolution.
    pub fn offset_channels(&self) -> usize {
        2 * self.groups * self.stencil_points()
    }

    /// Smallest channel count at least `min` that satisfies the divisibility
    /// rules.
    pub fn smallest_valid_channels(&self, min: usize) -> usize {
        let step = self.reduction * self.groups;
        min.max(1).div_ceil(step) * step
    }
}
