use cefpn_core::gradcheck::random_backbone;
use cefpn_core::neck::{self, InputGeometry, NeckConfig, NeckParams, SsfScheme, BACKBONE_STRIDES};
use cefpn_core::{Error, Shape, Tensor};
use proptest::prelude::*;

fn run(cfg: &NeckConfig, g: InputGeometry, seed: u64) -> (neck::PyramidOutputs, Option<Shape>) {
    let params = NeckParams::<f64>::init(cfg, seed).unwrap();
    let bb = random_backbone(cfg, g, seed).unwrap();
    let (tape, trace) = neck::trace_forward(&bb, &params, cfg, None).unwrap();
    let sce = trace.sce_out.map(|v| tape.value(v).shape());
    let out = neck::PyramidOutputs { levels: trace.outputs.map(|v| tape.value(v).clone()) };
    (out, sce)
}

#[test]
fn desk_example_shapes() {
    let (out, sce) = run(&NeckConfig::desk(), InputGeometry::new(1, 64, 64), 7);
    assert_eq!(
        out.shapes().map(|s| s.as_array()),
        [[1, 16, 16, 16], [1, 16, 8, 8], [1, 16, 4, 4], [1, 16, 2, 2]]
    );
    assert_eq!(sce.unwrap().as_array(), [1, 16, 4, 4]);
}

#[test]
fn seeded_runs_are_bit_identical() {
    let cfg = NeckConfig::desk();
    let g = InputGeometry::new(2, 64, 96);
    let (a, _) = run(&cfg, g, 3);
    let (b, _) = run(&cfg, g, 3);
    for k in 0..4 {
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.levels[k]), bits(&b.levels[k]));
    }
    let (c, _) = run(&cfg, g, 4);
    assert_ne!(a.levels[0], c.levels[0]);
    assert_eq!(NeckParams::<f64>::init(&cfg, 3).unwrap(), NeckParams::<f64>::init(&cfg, 3).unwrap());
}

#[test]
fn f32_forward_tracks_f64() {
    let cfg = NeckConfig::desk();
    let g = InputGeometry::new(1, 64, 64);
    let p64 = NeckParams::<f64>::init(&cfg, 1).unwrap();
    let b64 = random_backbone(&cfg, g, 1).unwrap();
    let p32 = NeckParams::<f32>::init(&cfg, 1).unwrap();
    let b32 = neck::BackbonePyramid { levels: b64.levels.clone().map(|t| t.cast::<f32>()) };
    let o64 = neck::cefpn_forward(&b64, &p64, &cfg).unwrap();
    let o32 = neck::cefpn_forward(&b32, &p32, &cfg).unwrap();
    for k in 0..4 {
        assert!(o32.levels[k].cast::<f64>().max_abs_diff(&o64.levels[k]).unwrap() < 1e-4);
    }
}

#[test]
fn unit_attention_override_leaves_pyramid_untouched() {
    let cfg = NeckConfig::desk();
    let g = InputGeometry::new(1, 64, 64);
    let params = NeckParams::<f64>::init(&cfg, 2).unwrap();
    let bb = random_backbone(&cfg, g, 2).unwrap();
    let ones = Tensor::ones([1, 16, 1, 1]);
    let (tape, trace) = neck::trace_forward(&bb, &params, &cfg, Some(&ones)).unwrap();
    for k in 0..3 {
        assert_eq!(tape.value(trace.outputs[k]), tape.value(trace.pyramid[k]));
    }
    let bad = Tensor::ones([1, 8, 1, 1]);
    assert!(matches!(neck::cefpn_forward_with(&bb, &params, &cfg, Some(&bad)), Err(Error::Shape(_))));
}

#[test]
fn wrong_backbone_shapes_are_rejected() {
    let cfg = NeckConfig::desk();
    let params = NeckParams::<f64>::init(&cfg, 2).unwrap();
    let mut bb = random_backbone(&cfg, InputGeometry::new(1, 64, 64), 2).unwrap();
    bb.levels[2] = Tensor::zeros([1, 64, 5, 4]);
    assert!(matches!(neck::cefpn_forward(&bb, &params, &cfg), Err(Error::Shape(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn stride_contract_over_random_geometries(
        hb in 1usize..=12, wb in 1usize..=12, batch in 1usize..=2, scheme in 0usize..3, seed in any::<u64>()
    ) {
        let c = 4;
        let cfg = NeckConfig {
            ssf_scheme: [SsfScheme::A, SsfScheme::B, SsfScheme::C][scheme],
            ..NeckConfig::cefpn(c)
        };
        let g = InputGeometry::new(batch, 32 * hb, 32 * wb);
        let (out, sce) = run(&cfg, g, seed);
        for (k, s) in out.shapes().iter().enumerate() {
            let stride = BACKBONE_STRIDES[k];
            prop_assert_eq!(s.as_array(), [batch, c, g.height / stride, g.width / stride]);
        }
        // context map is twice the C5 extent
        prop_assert_eq!(sce.unwrap().as_array(), [batch, c, 2 * hb, 2 * wb]);
    }
}
