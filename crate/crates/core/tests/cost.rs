use cefpn_core::cost::{compare_to_baseline, count_flops, count_params, CostModule, MacConvention, OpKind};
use cefpn_core::neck::{InputGeometry, NeckConfig, NeckParams, SsfScheme};
use cefpn_core::Error;
use proptest::prelude::*;

// Independent layer-sum oracles (weights + biases).
fn conv(cin: u64, cout: u64, k: u64) -> u64 {
    cout * cin * k * k + cout
}

fn linear(fin: u64, fout: u64) -> u64 {
    fout * fin + fout
}

fn ssf_a_oracle(c: u64) -> u64 {
    conv(8 * c, 4 * c, 1)
}

fn sce_oracle(c: u64) -> u64 {
    conv(8 * c, 4 * c, 3) + conv(8 * c, 16 * c, 1) + conv(8 * c, c, 1)
}

fn cag_oracle(c: u64, r: u64) -> u64 {
    2 * (linear(c, c / r) + linear(c / r, c))
}

/// CE-FPN drops the level-5 lateral and post-merge convolutions.
fn full_oracle(c: u64, r: u64) -> i64 {
    (sce_oracle(c) + cag_oracle(c, r)) as i64 - conv(8 * c, c, 1) as i64 - conv(c, c, 3) as i64
}

fn param_delta(cfg: &NeckConfig) -> i64 {
    let base = count_params(&NeckConfig::fpn_baseline(cfg.base_channel)).unwrap();
    compare_to_baseline(&count_params(cfg).unwrap(), &base).unwrap().params
}

#[test]
fn hand_computed_oracles() {
    assert_eq!(ssf_a_oracle(256), 2_098_176);
    assert_eq!(sce_oracle(256), 27_792_640);
    assert_eq!(sce_oracle(256) - (1024 + 4096 + 256), 27_787_264);
    assert_eq!(cag_oracle(256, 32), 8_720);
    assert_eq!(full_oracle(256, 32), 26_686_736);
}

#[test]
fn reference_width_parameter_deltas() {
    assert_eq!(param_delta(&NeckConfig::ssf_only(256, SsfScheme::C)), 0);
    assert_eq!(param_delta(&NeckConfig::ssf_only(256, SsfScheme::B)), 0);
    let a = param_delta(&NeckConfig::ssf_only(256, SsfScheme::A));
    assert_eq!(a, 2_098_176);
    assert!((a as f64 / 1e6 - 2.10).abs() <= 0.01);

    let cag = param_delta(&NeckConfig::cag_only(256));
    assert_eq!(cag, 8_720);
    assert!(cag as f64 / 1e6 <= 0.02);

    let sce = count_params(&NeckConfig::sce_only(256, true)).unwrap();
    assert_eq!(sce.subtotal(CostModule::Sce).params, 27_792_640);

    let full = param_delta(&NeckConfig::cefpn(256));
    assert_eq!(full, 26_686_736);
    assert!((full as f64 - 27.28e6).abs() / 27.28e6 < 0.05);
}

#[test]
fn desk_width_deltas_match_oracles() {
    for c in [8u64, 16, 32, 64] {
        let r = NeckConfig::default_reduction(c as usize) as u64;
        let cu = c as usize;
        assert_eq!(param_delta(&NeckConfig::ssf_only(cu, SsfScheme::A)), ssf_a_oracle(c) as i64);
        assert_eq!(param_delta(&NeckConfig::ssf_only(cu, SsfScheme::C)), 0);
        assert_eq!(param_delta(&NeckConfig::cag_only(cu)), cag_oracle(c, r) as i64);
        assert_eq!(param_delta(&NeckConfig::sce_only(cu, true)), sce_oracle(c) as i64);
        assert_eq!(param_delta(&NeckConfig::cefpn(cu)), full_oracle(c, r));
    }
    assert_eq!(full_oracle(16, 4), 104_792);
}

#[test]
fn counts_equal_allocated_scalars() {
    for c in [4, 8, 16, 32] {
        for cfg in [
            NeckConfig::fpn_baseline(c),
            NeckConfig::ssf_only(c, SsfScheme::A),
            NeckConfig::ssf_only(c, SsfScheme::B),
            NeckConfig::ssf_only(c, SsfScheme::C),
            NeckConfig::sce_only(c, true),
            NeckConfig::sce_only(c, false),
            NeckConfig::cag_only(c),
            NeckConfig::cefpn(c),
            NeckConfig { bias: false, ..NeckConfig::cefpn(c) },
        ] {
            let allocated = NeckParams::<f64>::zeros(&cfg).unwrap().scalar_count() as u64;
            assert_eq!(count_params(&cfg).unwrap().params, allocated, "{cfg:?}");
        }
    }
}

#[test]
fn single_lateral_by_hand() {
    // lateral2 at c = 256 is a 1x1 256 -> 256 conv; 128x128 input gives a 32x32 map
    let r = count_flops(&NeckConfig::cefpn(256), InputGeometry::new(1, 128, 128), MacConvention::Two).unwrap();
    let e = r.entry("lateral2").unwrap();
    assert_eq!(e.flops, 134_217_728);
    assert_eq!(e.flops, 2 * 256 * 256 * 32 * 32);
    assert_eq!(e.params, 256 * 256 + 256);
}

#[test]
fn ssf_c_adds_no_flops_under_either_convention() {
    let g = InputGeometry::new(2, 800, 1344);
    for mac in [MacConvention::One, MacConvention::Two] {
        let base = count_flops(&NeckConfig::fpn_baseline(256), g, mac).unwrap();
        let ssf = count_flops(&NeckConfig::ssf_only(256, SsfScheme::C), g, mac).unwrap();
        let d = compare_to_baseline(&ssf, &base).unwrap();
        assert_eq!(d.flops, 0);
        assert_eq!(d.params, 0);
        // the fusion sums are counted, in their own column
        assert!(d.elementwise_flops > 0);
    }
}

fn gflop_delta(cfg: &NeckConfig, base: &NeckConfig, g: InputGeometry) -> f64 {
    let r = count_flops(cfg, g, MacConvention::One).unwrap();
    let b = count_flops(base, g, MacConvention::One).unwrap();
    compare_to_baseline(&r, &b).unwrap().flops as f64 / 1e9
}

#[test]
fn mac_one_deltas_at_1344x800() {
    // 1333x800 rounded up to a multiple of 32
    let g = InputGeometry::new(1, 800, 1344);
    let base = NeckConfig::fpn_baseline(256);
    let round2 = |v: f64| (v * 100.0).round() / 100.0;
    assert_eq!(round2(gflop_delta(&NeckConfig::ssf_only(256, SsfScheme::A), &base, g)), 2.20);
    assert_eq!(round2(gflop_delta(&NeckConfig::sce_only(256, true), &base, g)), 22.11);
    assert_eq!(round2(gflop_delta(&NeckConfig::sce_only(256, false), &base, g)), 20.94);
}

#[test]
fn mac_convention_doubles_compute_entries_only() {
    let g = InputGeometry::new(1, 96, 160);
    for cfg in [NeckConfig::cefpn(16), NeckConfig::fpn_baseline(16), NeckConfig::ssf_only(16, SsfScheme::A)] {
        let one = count_flops(&cfg, g, MacConvention::One).unwrap();
        let two = count_flops(&cfg, g, MacConvention::Two).unwrap();
        for (a, b) in one.entries.iter().zip(&two.entries) {
            assert_eq!(a.layer, b.layer);
            assert_eq!(a.params, b.params);
            match a.op {
                OpKind::Conv | OpKind::Linear => assert_eq!(b.flops, 2 * a.flops, "{}", a.layer),
                OpKind::Elementwise => assert_eq!(b.flops, a.flops, "{}", a.layer),
            }
        }
        assert_eq!(two.flops, 2 * one.flops);
        assert_eq!(two.elementwise_flops, one.elementwise_flops);
    }
}

#[test]
fn subtotals_are_sums_of_entries() {
    let r = count_flops(&NeckConfig::cefpn(32), InputGeometry::new(1, 224, 320), MacConvention::Two).unwrap();
    for s in &r.subtotals {
        let entries: Vec<_> = r.entries.iter().filter(|e| e.module == s.module).collect();
        assert_eq!(s.params, entries.iter().map(|e| e.params).sum::<u64>());
        assert_eq!(
            s.flops + s.elementwise_flops,
            entries.iter().map(|e| e.flops).sum::<u64>()
        );
    }
    assert_eq!(r.params, r.entries.iter().map(|e| e.params).sum::<u64>());
    assert_eq!(r.flops + r.elementwise_flops, r.entries.iter().map(|e| e.flops).sum::<u64>());
}

#[test]
fn mismatched_reports_are_contract_errors() {
    let cfg = NeckConfig::cefpn(16);
    let a = count_flops(&cfg, InputGeometry::new(1, 64, 64), MacConvention::Two).unwrap();
    let b = count_flops(&NeckConfig::fpn_baseline(16), InputGeometry::new(1, 64, 96), MacConvention::Two).unwrap();
    assert!(matches!(compare_to_baseline(&a, &b), Err(Error::Contract(_))));
    let wide = count_flops(&NeckConfig::fpn_baseline(32), InputGeometry::new(1, 64, 64), MacConvention::Two).unwrap();
    assert!(matches!(compare_to_baseline(&a, &wide), Err(Error::Contract(_))));
    let zero = compare_to_baseline(&a, &a).unwrap();
    assert_eq!((zero.params, zero.flops, zero.elementwise_flops), (0, 0, 0));
    assert!(zero.modules.iter().all(|m| m.params == 0 && m.flops == 0 && m.elementwise_flops == 0));
}

#[test]
fn bad_geometry_is_a_config_error() {
    let cfg = NeckConfig::cefpn(16);
    for (h, w) in [(65, 64), (64, 0), (48, 64)] {
        assert!(matches!(
            count_flops(&cfg, InputGeometry::new(1, h, w), MacConvention::Two),
            Err(Error::Config(_))
        ));
    }
}

/// Pooled 1x1 descriptors (the global context conv and the attention MLPs)
/// do not depend on the input size.
fn spatial(layer: &str) -> bool {
    !(layer == "sce.global" || layer.starts_with("cag.fc") || layer == "cag.sum")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn params_are_geometry_independent_and_flops_scale_with_area(
        hb in 1usize..=6, wb in 1usize..=6, batch in 1usize..=3, cidx in 0usize..3, scheme in 0usize..3
    ) {
        let c = [8, 16, 32][cidx];
        let cfg = NeckConfig { ssf_scheme: [SsfScheme::A, SsfScheme::B, SsfScheme::C][scheme], ..NeckConfig::cefpn(c) };
        // even multiples of 64 keep every pooled extent an exact half
        let small = count_flops(&cfg, InputGeometry::new(batch, 64 * hb, 64 * wb), MacConvention::Two).unwrap();
        let tall = count_flops(&cfg, InputGeometry::new(batch, 128 * hb, 64 * wb), MacConvention::Two).unwrap();
        prop_assert_eq!(small.params, tall.params);
        prop_assert_eq!(small.params, count_params(&cfg).unwrap().params);
        for (a, b) in small.entries.iter().zip(&tall.entries) {
            if spatial(&a.layer) {
                prop_assert_eq!(b.flops, 2 * a.flops, "{}", a.layer);
            } else {
                prop_assert_eq!(b.flops, a.flops, "{}", a.layer);
            }
        }
    }
}
