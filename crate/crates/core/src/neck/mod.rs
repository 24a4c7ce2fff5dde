//! CE-FPN neck: sub-pixel skip fusion (SSF), sub-pixel context enhancement
//! (SCE) and channel-attention guidance (CAG) on top of an FPN top-down
//! pathway with the F5/P5 nodes removed.
//!
//! The functions here take and return plain tensors. Each one records its
//! work on a private tape; use [`graph`] directly to differentiate.

mod config;
pub mod graph;
mod params;
mod pyramid;

pub use config::{Interpolation, ModuleSet, NeckConfig, SsfScheme};
pub use params::{BoundParams, Bottleneck, CagParams, LayerRef, NeckParams, SceParams};
pub use pyramid::{BackbonePyramid, InputGeometry, PyramidOutputs, BACKBONE_STRIDES};

use crate::error::{Error, Result};
use crate::tensor::{ops, ConvSpec, ConvVars, GradTape, LinearVars, Scalar, Tensor};

pub use crate::tensor::ops::{pixel_shuffle, pixel_unshuffle};

/// `f_lo + PS(transform(c_hi))`; see [`graph::ssf_fuse`].
pub fn ssf_fuse<T: Scalar>(
    c_hi: &Tensor<T>,
    f_lo: &Tensor<T>,
    scheme: SsfScheme,
    params: &NeckParams<T>,
) -> Result<Tensor<T>> {
    let mut tape = GradTape::new();
    let hi = tape.leaf(c_hi.clone());
    let lo = tape.leaf(f_lo.clone());
    let reduce = params.ssf_reduce.as_ref().map(|c| ConvVars::bind(&mut tape, c));
    let out = graph::ssf_fuse(&mut tape, hi, lo, scheme, reduce.as_ref())?;
    Ok(tape.value(out).clone())
}

/// Top-down merge over finest-first laterals, one 3x3 convolution per level.
pub fn top_down_merge<T: Scalar>(laterals: &[Tensor<T>], convs: &[ConvSpec<T>]) -> Result<Vec<Tensor<T>>> {
    let mut tape = GradTape::new();
    let f: Vec<_> = laterals.iter().map(|t| tape.leaf(t.clone())).collect();
    let c: Vec<_> = convs.iter().map(|s| ConvVars::bind(&mut tape, s)).collect();
    let out = graph::top_down_merge(&mut tape, &f, &c)?;
    Ok(out.into_iter().map(|v| tape.value(v).clone()).collect())
}

/// Integration map at P4 resolution from finest-first levels P2..P4 (or
/// P2..P5) plus an optional context map.
pub fn build_integration_map<T: Scalar>(pyramid: &[Tensor<T>], sce_out: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let mut tape = GradTape::new();
    let p: Vec<_> = pyramid.iter().map(|t| tape.leaf(t.clone())).collect();
    let s = sce_out.map(|t| tape.leaf(t.clone()));
    let out = graph::build_integration_map(&mut tape, &p, s)?;
    Ok(tape.value(out).clone())
}

pub fn sce_forward<T: Scalar>(c5: &Tensor<T>, params: &SceParams<T>) -> Result<Tensor<T>> {
    let mut tape = GradTape::new();
    let x = tape.leaf(c5.clone());
    let vars = params::SceVars {
        local: ConvVars::bind(&mut tape, &params.local),
        pooled: ConvVars::bind(&mut tape, &params.pooled),
        global: ConvVars::bind(&mut tape, &params.global),
    };
    let out = graph::sce_forward(&mut tape, x, &vars)?;
    Ok(tape.value(out).clone())
}

/// Channel weights `(n, c, 1, 1)`, each strictly inside `(0, 1)`.
pub fn cag_weights<T: Scalar>(integration: &Tensor<T>, params: &CagParams<T>) -> Result<Tensor<T>> {
    let mut tape = GradTape::new();
    let x = tape.leaf(integration.clone());
    let mut bind = |b: &Bottleneck<T>| params::BottleneckVars {
        reduce: LinearVars::bind(&mut tape, &b.reduce),
        expand: LinearVars::bind(&mut tape, &b.expand),
    };
    let vars = params::CagVars {
        avg_branch: bind(&params.avg_branch),
        max_branch: bind(&params.max_branch),
    };
    let out = graph::cag_weights(&mut tape, x, &vars)?;
    Ok(tape.value(out).clone())
}

/// `R = w ⊙ P` with `w` either `(n, c, 1, 1)` or a flat vector of length `c`.
pub fn cag_apply<T: Scalar>(level: &Tensor<T>, weights: &Tensor<T>) -> Result<Tensor<T>> {
    let s = level.shape();
    if weights.numel() == s.c && weights.shape() != crate::Shape::new(s.n, s.c, 1, 1) {
        return ops::mul_channelwise(level, weights.data());
    }
    ops::scale_channels(level, weights)
}

/// Full CE-FPN forward pass.
pub fn cefpn_forward<T: Scalar>(
    backbone: &BackbonePyramid<T>,
    params: &NeckParams<T>,
    config: &NeckConfig,
) -> Result<PyramidOutputs<T>> {
    cefpn_forward_with(backbone, params, config, None)
}

/// As [`cefpn_forward`], optionally replacing the attention weights with a
/// fixed `(n, c, 1, 1)` tensor.
pub fn cefpn_forward_with<T: Scalar>(
    backbone: &BackbonePyramid<T>,
    params: &NeckParams<T>,
    config: &NeckConfig,
    attention_override: Option<&Tensor<T>>,
) -> Result<PyramidOutputs<T>> {
    let (tape, trace) = trace_forward(backbone, params, config, attention_override)?;
    Ok(PyramidOutputs {
        levels: trace.outputs.map(|v| tape.value(v).clone()),
    })
}

/// Records the forward pass and returns the tape for differentiation.
pub fn trace_forward<T: Scalar>(
    backbone: &BackbonePyramid<T>,
    params: &NeckParams<T>,
    config: &NeckConfig,
    attention_override: Option<&Tensor<T>>,
) -> Result<(GradTape<T>, graph::NeckTrace)> {
    config.validate()?;
    params.check(config)?;
    backbone.validate(config.base_channel)?;
    let mut tape = GradTape::new();
    let inputs = [0, 1, 2, 3].map(|k| tape.leaf(backbone.levels[k].clone()));
    let bound = params.bind(&mut tape);
    let over = match attention_override {
        Some(w) => {
            let s5 = backbone.levels[0].shape();
            let want = crate::Shape::new(s5.n, config.base_channel, 1, 1);
            if w.shape() != want {
                return Err(Error::shape(format!("attention override {} must be {want}", w.shape())));
            }
            Some(tape.leaf(w.clone()))
        }
        None => None,
    };
    let trace = graph::cefpn_forward(&mut tape, inputs, bound, config, over)?;
    Ok((tape, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_backbone(c: usize, h: usize, w: usize, seed: u64) -> BackbonePyramid<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = BackbonePyramid::<f64>::expected_shapes(1, c, h, w).unwrap();
        BackbonePyramid {
            levels: s.map(|s| Tensor::uniform(s, -1.0, 1.0, &mut rng)),
        }
    }

    #[test]
    fn desk_scale_shapes() {
        let cfg = NeckConfig::desk();
        let params = NeckParams::init(&cfg, 7).unwrap();
        let out = cefpn_forward(&random_backbone(16, 64, 64, 7), &params, &cfg).unwrap();
        assert_eq!(
            out.shapes(),
            [
                Shape::new(1, 16, 16, 16),
                Shape::new(1, 16, 8, 8),
                Shape::new(1, 16, 4, 4),
                Shape::new(1, 16, 2, 2)
            ]
        );
    }

    #[test]
    fn every_variant_runs_except_sce_without_cag() {
        let bb = random_backbone(8, 64, 32, 3);
        for cfg in [
            NeckConfig::fpn_baseline(8),
            NeckConfig::ssf_only(8, SsfScheme::A),
            NeckConfig::ssf_only(8, SsfScheme::B),
            NeckConfig::cag_only(8),
            NeckConfig { include_f5_p5: true, ..NeckConfig::cefpn(8) },
        ] {
            let p = NeckParams::init(&cfg, 1).unwrap();
            let out = cefpn_forward(&bb, &p, &cfg).unwrap();
            assert_eq!(out.levels[3].shape(), Shape::new(1, 8, 2, 1));
        }
        let cfg = NeckConfig::sce_only(8, false);
        let p = NeckParams::init(&cfg, 1).unwrap();
        assert!(matches!(cefpn_forward(&bb, &p, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn mismatched_params_are_rejected() {
        let cfg = NeckConfig::desk();
        let p = NeckParams::init(&NeckConfig::fpn_baseline(16), 1).unwrap();
        assert!(cefpn_forward(&random_backbone(16, 64, 64, 1), &p, &cfg).is_err());
    }

    #[test]
    fn sub_operation_errors_name_the_level() {
        // scheme-c parameters driven with a scheme-a config: no reduction layer bound
        let params = NeckParams::<f64>::init(&NeckConfig::desk(), 1).unwrap();
        let cfg = NeckConfig { ssf_scheme: SsfScheme::A, ..NeckConfig::desk() };
        let bb = random_backbone(16, 64, 64, 1);
        let mut tape = GradTape::new();
        let inputs = [0, 1, 2, 3].map(|k| tape.leaf(bb.levels[k].clone()));
        let bound = params.bind(&mut tape);
        let err = graph::cefpn_forward(&mut tape, inputs, bound, &cfg, None).unwrap_err();
        assert!(err.to_string().starts_with("skip fusion C5 -> F4"), "{err}");
        assert!(matches!(err.root(), Error::Config(_)));
    }

    #[test]
    fn cag_apply_identity_and_vector_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = Tensor::<f64>::uniform([1, 4, 3, 3], -1.0, 1.0, &mut rng);
        assert_eq!(cag_apply(&p, &Tensor::ones([1, 4, 1, 1])).unwrap(), p);
        assert_eq!(cag_apply(&p, &Tensor::ones([4, 1, 1, 1])).unwrap(), p);
        assert!(cag_apply(&p, &Tensor::zeros([1, 4, 1, 1])).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(matches!(cag_apply(&p, &Tensor::ones([1, 3, 1, 1])), Err(Error::Shape(_))));
    }
}
