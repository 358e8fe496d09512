//! Feature upsampling by query-guided local deformable attention.
//!
//! Each output pixel projects to a reference point in the input map, gathers
//! keys and values from a `k_u x k_u` neighborhood around it (optionally
//! displaced by learned, bounded offsets) and aggregates them with softmax
//! attention driven by its own upsampled query. Bilinear and nearest-neighbor
//! upsampling fall out as degenerate settings.
//!
//! Modules:
//! - [`tensor`]: NCHW tensors, projections, convolutions, softmax.
//! - [`geometry`]: coordinate projection, stencils, bilinear sampling.
//! - [`upsamplers`]: the four upsamplers, offset predictor, analytic backward.
//! - [`oracle`]: slow reference implementations and the FLOP model.
//! - [`gradcheck`]: finite-difference verification of every backward pass.
//! - [`trainer`]: toy gradient-descent tasks.
//! - [`io`]: tensor, weight, image, offset-dump and report files.

pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod oracle;
pub mod tensor;
pub mod trainer;
pub mod upsamplers;

pub use error::{Error, Result};
pub use geometry::{CoordGrid, PaddingMode, Point, ProjectionMode};
pub use gradcheck::{GradBundle, GradReport};
pub use oracle::{flops, FlopsBreakdown};
pub use tensor::{DType, Rng, Shape, Tensor};
pub use upsamplers::{
    init_weights, la_aqu_upsample, lda_aqu_backward, lda_aqu_upsample, InitScheme, LdaAquOutput,
    LdaAquWeights, UpsampleConfig, UpsamplerKind,
};
