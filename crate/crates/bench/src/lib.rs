//! Fixtures shared by the benchmarks.

use cefpn_core::neck::{BackbonePyramid, NeckConfig, NeckParams};
use cefpn_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seeded noise tensor in `[-1, 1)`.
pub fn noise(shape: [usize; 4], seed: u64) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, &mut rng(seed))
}

/// Parameters and a noise backbone for `config` at `height x width`.
pub fn neck_fixture(config: &NeckConfig, height: usize, width: usize) -> (NeckParams, BackbonePyramid) {
    let params = NeckParams::<f64>::init(config, 1).expect("valid config");
    let shapes = BackbonePyramid::<f64>::expected_shapes(1, config.base_channel, height, width).expect("valid geometry");
    let mut r = rng(2);
    let levels = shapes.map(|s| Tensor::uniform(s, -1.0, 1.0, &mut r));
    (params, BackbonePyramid { levels })
}
