use cefpn_core::neck::{BackbonePyramid, InputGeometry};
use cefpn_core::{Result, Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::BackboneKind;

/// Stands in for a trained backbone: produces C2..C5 at strides 4..32 with
/// `{c, 2c, 4c, 8c}` channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticBackbone {
    pub kind: BackboneKind,
    pub seed: u64,
}

/// RNG stream reserved for backbone noise; parameters use stream 0.
const NOISE_STREAM: u64 = 1;

impl SyntheticBackbone {
    pub fn new(kind: BackboneKind, seed: u64) -> Self {
        SyntheticBackbone { kind, seed }
    }

    /// Ramp value at pixel `(y, x)` of a `h x w` plane of level `k` (0 = C2):
    /// `k + (y * w + x) / (h * w)`. Identical in every channel and batch item.
    pub fn ramp_value(level: usize, h: usize, w: usize, y: usize, x: usize) -> f64 {
        level as f64 + (y * w + x) as f64 / (h * w) as f64
    }

    pub fn generate<T: Scalar>(&self, base_channel: usize, geometry: InputGeometry) -> Result<BackbonePyramid<T>> {
        geometry.validate()?;
        let shapes = BackbonePyramid::<T>::expected_shapes(geometry.batch, base_channel, geometry.height, geometry.width)?;
        let levels: [Tensor<f64>; 4] = match self.kind {
            BackboneKind::Noise => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(NOISE_STREAM);
                shapes.map(|s| Tensor::uniform(s, -1.0, 1.0, &mut rng))
            }
            BackboneKind::Ramp => {
                let mut k = 0;
                shapes.map(|s| {
                    let level = k;
                    k += 1;
                    Tensor::from_fn(s, |_, _, y, x| Self::ramp_value(level, s.h, s.w, y, x))
                })
            }
        };
        // generated in double precision so both precisions see the same pattern
        Ok(BackbonePyramid { levels: levels.map(|t| t.cast::<T>()) })
    }
}
