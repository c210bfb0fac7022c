use cifrenet_core::blocks::{build_cifrenet, NetworkCfg};
use cifrenet_core::params::ParamKind;
use cifrenet_core::{Error, Tensor};

fn image(n: usize, h: usize, w: usize) -> Tensor<f32> {
    let len = n * 3 * h * w;
    Tensor::new(&[n, 3, h, w], (0..len).map(|i| ((i * 37 % 101) as f32 / 50.0) - 1.0).collect()).unwrap()
}

#[test]
fn logits_match_input_resolution() {
    let net = build_cifrenet::<f32>(&NetworkCfg::default(), 1).unwrap();
    let y = net.infer(&image(1, 48, 40)).unwrap();
    assert_eq!(y.shape(), &[1, 19, 48, 40]);
    assert!(y.is_finite());

    let mini = build_cifrenet::<f32>(&NetworkCfg::mini(4), 1).unwrap();
    let y = mini.infer(&image(2, 36, 20)).unwrap();
    assert_eq!(y.shape(), &[2, 4, 36, 20]);
}

#[test]
fn full_resolution_shapes() {
    let net = build_cifrenet::<f32>(&NetworkCfg::default(), 0).unwrap();
    let rows = net.cost([1, 3, 360, 640]).unwrap();
    let find = |name: &str| rows.iter().find(|r| r.name == name).unwrap().out_shape.clone();
    assert_eq!(find("mcim.concat"), vec![1, 400, 45, 80]);
    assert_eq!(rows.last().unwrap().out_shape, vec![1, 19, 360, 640]);
}

#[test]
fn input_not_divisible_by_output_stride() {
    let net = build_cifrenet::<f32>(&NetworkCfg::default(), 0).unwrap();
    assert!(net.infer(&image(1, 44, 40)).is_err());
    let gray = Tensor::<f32>::zeros(&[1, 1, 16, 16]).unwrap();
    assert!(net.infer(&gray).is_err());
}

/// The analytic report and an executed pass agree on every named layer.
#[test]
fn trace_agrees_with_cost_rows() {
    for cfg in [NetworkCfg::mini(4), NetworkCfg::mini(4).ablated()] {
        let net = build_cifrenet::<f32>(&cfg, 2).unwrap();
        let trace = net.trace(&image(1, 32, 24)).unwrap();
        let rows = net.cost([1, 3, 32, 24]).unwrap();
        assert!(!trace.is_empty());
        let mut matched = 0;
        for t in &trace {
            if let Some(r) = rows.iter().find(|r| r.name == t.name) {
                assert_eq!(r.out_shape, t.shape, "{}", t.name);
                matched += 1;
            }
        }
        assert!(matched * 2 >= trace.len(), "{matched} of {}", trace.len());
    }
}

#[test]
fn counted_params_equal_materialized() {
    for cfg in [NetworkCfg::default(), NetworkCfg::mini(4), NetworkCfg::mini(4).ablated()] {
        let net = build_cifrenet::<f32>(&cfg, 0).unwrap();
        let count = net.arch.param_count();
        let store = &net.params;
        let weights = store.count_where(|k| matches!(k, ParamKind::ConvWeight | ParamKind::LinearWeight));
        let bias = store.count_where(|k| k == ParamKind::Bias);
        let norm = store.count_where(ParamKind::is_norm);
        assert_eq!(count.weights as usize, weights);
        assert_eq!(count.bias as usize, bias);
        assert_eq!(count.norm as usize, norm);
        assert_eq!(count.total() as usize, store.trainable_count());
    }
}

#[test]
fn default_widths_and_head() {
    let cfg = NetworkCfg::default();
    assert_eq!(cfg.mcim_spec().unwrap().out_channels(), 400);
    assert_eq!(cfg.head_channels(), 400);
    assert_eq!(cfg.ablated().head_channels(), 320);
}

#[test]
fn parameter_names_are_hierarchical() {
    let net = build_cifrenet::<f32>(&NetworkCfg::mini(4), 0).unwrap();
    for name in [
        "stage0.conv.weight",
        "stage4.block0.dwconv.weight",
        "stage4.block0.dwconv.bn.running_var",
        "lrm.fc1.weight",
        "mcim.dsp_m.branch2.pwconv.act.alpha",
        "head.conv.bias",
    ] {
        assert!(net.params.find(name).is_some(), "{name}");
    }
}

#[test]
fn invalid_configs_rejected() {
    let bad_classes = NetworkCfg {
        num_classes: 1,
        ..NetworkCfg::mini(4)
    };
    assert!(matches!(build_cifrenet::<f32>(&bad_classes, 0), Err(Error::Config(_))));
    let bad_os = NetworkCfg {
        output_stride: 6,
        ..NetworkCfg::default()
    };
    assert!(build_cifrenet::<f32>(&bad_os, 0).is_err());
}

#[test]
fn seeded_build_is_reproducible() {
    let a = build_cifrenet::<f32>(&NetworkCfg::mini(3), 17).unwrap();
    let b = build_cifrenet::<f32>(&NetworkCfg::mini(3), 17).unwrap();
    let c = build_cifrenet::<f32>(&NetworkCfg::mini(3), 18).unwrap();
    assert_eq!(a.params, b.params);
    assert_ne!(a.params, c.params);
}
