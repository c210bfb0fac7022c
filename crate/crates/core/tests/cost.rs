use std::time::Instant;

use cifrenet_core::blocks::{build_cifrenet, DspSpec, McimCfg, NetworkCfg, Ratio};
use cifrenet_core::cost::{
    cascade_receptive_field, conv_macs, conv_params, depthwise_separable_params, dsp_params, layer_rf, mcim_params,
    receptive_field, receptive_field_stride1, regular_dsp_params, summarize, RfLayer,
};
use cifrenet_core::ops::ConvSpec;
use proptest::prelude::*;

/// Weight comparison at Ci = Co = 320, 3×3, g = 4, n = 4 paths, r = 1/4.
#[test]
fn reduction_comparison_table() {
    let start = Instant::now();
    let rc = conv_params(&ConvSpec::new(320, 320, 3)).unwrap().weights;
    let gc = conv_params(&ConvSpec::new(320, 320, 3).groups(4)).unwrap().weights;
    let dsc = depthwise_separable_params(320, 320, 3).unwrap();
    let spec = DspSpec::new(320, Ratio::new(1, 4).unwrap(), &[1, 2, 3, 5], 4, false);
    let rc_dsp = regular_dsp_params(&spec).unwrap();
    let dsp = dsp_params(&spec).unwrap().weights;

    // independent arithmetic: Ci·Co·m², /g, Ci·m² + Ci·Co, Ci·Cr + n·m²·Cr², Ci·Cr/g + n(m²·Cr + Cr²)
    let (ci, co, m, g, n, cr) = (320u64, 320u64, 3u64, 4u64, 4u64, 80u64);
    assert_eq!(rc, ci * co * m * m);
    assert_eq!(gc, ci * co * m * m / g);
    assert_eq!(dsc, ci * m * m + ci * co);
    assert_eq!(rc_dsp, ci * cr + n * m * m * cr * cr);
    assert_eq!(dsp, ci * cr / g + n * (m * m * cr + cr * cr));

    assert_eq!([rc, gc, dsc, rc_dsp, dsp], [921_600, 230_400, 105_280, 256_000, 34_880]);
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn context_receptive_field() {
    let c = McimCfg::cityscapes();
    assert_eq!(cascade_receptive_field(&c.dilations, 3).unwrap(), 83);
    // 5 + 27 + 47 − 2 spelled out per layer
    assert_eq!(layer_rf(3, 5) + layer_rf(3, 13) + layer_rf(3, 23) - 2, 83);
}

#[test]
fn conv_macs_match_loop_count() {
    for spec in [
        ConvSpec::new(3, 4, 3).padding(1).stride(2),
        ConvSpec::depthwise(6, 3, 3),
        ConvSpec::pointwise(8, 4).groups(2),
    ] {
        let (n, h, w) = (2, 9, 7);
        let (oh, ow) = spec.output_hw(h, w).unwrap();
        let mut count = 0u64;
        for _ in 0..n * spec.out_channels * oh * ow {
            for _ in 0..spec.in_channels / spec.groups * spec.kernel * spec.kernel {
                count += 1;
            }
        }
        assert_eq!(conv_macs(&spec, [n, spec.in_channels, h, w]).unwrap(), count);
    }
}

#[test]
fn default_network_scale() {
    let cfg = NetworkCfg::default();
    let net = build_cifrenet::<f32>(&cfg, 0).unwrap();
    let report = summarize(&net, [1, 3, 360, 640]).unwrap();
    let trainable = report.trainable_params();
    assert_eq!(trainable as usize, net.params.trainable_count());
    assert!((trainable as f64 / 1.9e6 - 1.0).abs() <= 0.10, "{trainable}");
    let macs = report.total_macs() as f64;
    assert!((macs / 7.3e9 - 1.0).abs() <= 0.25, "{macs}");
    assert_eq!(report.flops(), 2 * report.total_macs());
    assert_eq!(report.mcim_rf, Some(83));
}

#[test]
fn context_module_cost_is_closed_form() {
    let cfg = NetworkCfg::default();
    let spec = cfg.mcim_spec().unwrap();
    let net = build_cifrenet::<f32>(&cfg, 0).unwrap();
    let m = net.arch.mcim.as_ref().unwrap();
    let p = mcim_params(&spec).unwrap();
    assert_eq!(m.param_count(), p);
    assert_eq!(spec.out_channels(), 400);
    // 3 blocks × (320·64/4 + 4(9·64 + 64²)) + 320·80
    assert_eq!(p.weights, 3 * (320 * 64 / 4 + 4 * (9 * 64 + 64 * 64)) + 320 * 80);
}

#[test]
fn csv_has_fixed_columns() {
    let net = build_cifrenet::<f32>(&NetworkCfg::mini(4), 0).unwrap();
    let report = summarize(&net, [1, 3, 96, 96]).unwrap();
    let csv = report.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("name,params,macs,rf,out_shape"));
    assert_eq!(lines.count(), report.rows.len());
    assert!(report.to_table().contains("mcim.concat"));
}

proptest! {
    #[test]
    fn stride_aware_rf_never_below_stride1(layers in prop::collection::vec((1usize..4, 1usize..6, 1usize..3), 1..6)) {
        let ls: Vec<RfLayer> = layers.iter().map(|&(k, d, s)| RfLayer::new(2 * k - 1, d, s)).collect();
        prop_assert!(receptive_field(&ls).unwrap() >= receptive_field_stride1(&ls).unwrap());
    }

    #[test]
    fn rf_grows_with_dilation(k in 1usize..4, d in 1usize..20) {
        let k = 2 * k + 1;
        prop_assert!(layer_rf(k, d + 1) > layer_rf(k, d));
    }

    #[test]
    fn halving_groups_doubles_weights(c in 1usize..16, k in 0usize..3) {
        let k = 2 * k + 1;
        let (ci, co) = (4 * c, 8 * c);
        let g4 = conv_params(&ConvSpec::new(ci, co, k).groups(4)).unwrap().weights;
        let g2 = conv_params(&ConvSpec::new(ci, co, k).groups(2)).unwrap().weights;
        prop_assert_eq!(g2, 2 * g4);
    }
}
