use std::time::Instant;

use cifrenet_core::blocks::{build_cifrenet, NetworkCfg};
use cifrenet_core::gradcheck::{describe, run_suite, CASES, GRAD_TOL};
use cifrenet_core::ops::Mode;
use cifrenet_core::Tensor;

#[test]
fn every_case_over_ten_seeds() {
    let start = Instant::now();
    let results = run_suite(0..10).unwrap();
    assert_eq!(results.len(), CASES.len() * 10);
    for r in &results {
        assert!(r.max_rel_err < GRAD_TOL, "{}", describe(r));
    }
    assert!(start.elapsed().as_secs() < 300);
}

#[test]
fn suite_covers_required_operators() {
    let names: Vec<&str> = CASES.iter().map(|c| c.0).collect();
    for want in [
        "conv_regular",
        "conv_strided",
        "conv_grouped_dilated",
        "conv_depthwise",
        "conv_pointwise",
        "batch_norm_train",
        "prelu",
        "global_avg_pool",
        "bilinear_upsample",
        "channel_shuffle",
        "softmax",
        "linear",
        "cross_entropy",
        "lrm",
        "dsp",
        "mcim",
    ] {
        assert!(names.contains(&want), "{want}");
    }
}

/// Every trainable tensor of the assembled mini network receives gradient.
#[test]
fn gradient_reaches_every_parameter() {
    let mut net = build_cifrenet::<f32>(&NetworkCfg::mini(4), 3).unwrap();
    let image = Tensor::new(
        &[2, 3, 32, 32],
        (0..2 * 3 * 32 * 32).map(|i| ((i * 7919 % 211) as f32 / 105.0) - 1.0).collect(),
    )
    .unwrap();
    let labels: Vec<u8> = (0..2 * 32 * 32).map(|i| ((i / 7) % 4) as u8).collect();
    let (arch, mut s) = net.session(Mode::Train);
    let x = s.input(image);
    let logits = arch.forward(&mut s, x).unwrap();
    let loss = s.graph.cross_entropy(logits, &labels, 255).unwrap();
    let grads = s.graph.backward(loss).unwrap();
    let pg = s.param_grads(&grads);
    drop(s);
    let trainable = net.params.iter().filter(|(_, p)| p.kind.trainable()).count();
    assert_eq!(pg.len(), trainable);
    for (id, g) in &pg {
        assert!(g.is_finite());
        assert!(g.max_abs() > 0.0, "{} has zero gradient", net.params.get(*id).name);
    }
}
