//! Shared fixtures for the criterion benches.

use lda_aqu::{init_weights, InitScheme, LdaAquWeights, Rng, Shape, Tensor, UpsampleConfig};

/// Random `(1, channels, side, side)` input with freshly initialized weights.
pub fn fixture(
    config: &UpsampleConfig,
    channels: usize,
    side: usize,
    seed: u64,
) -> (Tensor, LdaAquWeights) {
    let mut rng = Rng::seed(seed);
    let weights = init_weights(
        config,
        channels,
        &mut rng,
        InitScheme::RandomOffsets { bound: 0.05 },
    )
    .expect("bench config is valid");
    let x = Tensor::uniform(Shape::new(1, channels, side, side), -1.0, 1.0, &mut rng);
    (x, weights)
}
