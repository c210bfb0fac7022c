use cifrenet_core::blocks::{build_cifrenet, NetworkCfg};
use cifrenet_core::params::{ParamKind, ParamStore};
use cifrenet_core::train::*;
use cifrenet_core::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn poly_schedule_points() {
    assert_eq!(poly_lr(0, 2000, 0.005, 0.9).unwrap(), 0.005);
    assert_eq!(poly_lr(2000, 2000, 0.005, 0.9).unwrap(), 0.0);
    let mid = poly_lr(1000, 2000, 0.005, 0.9).unwrap();
    // 0.005 · 0.5^0.9
    assert!((mid - 0.005 * (0.9 * 0.5f64.ln()).exp()).abs() < 1e-15);
    assert!((mid - 0.0026794).abs() <= 1e-7, "{mid}");
    assert!(poly_lr(2001, 2000, 0.005, 0.9).is_err());
}

#[test]
fn miou_of_symmetric_two_class_matrix() {
    let cm = ConfusionMatrix::from_counts(2, vec![3, 1, 1, 3]).unwrap();
    assert_eq!(cm.miou().unwrap(), 0.6);
}

#[test]
fn miou_from_label_maps() {
    let label = [0u8, 0, 1, 1, 2, 255];
    let pred = [0u8, 1, 1, 1, 2, 0];
    let mut cm = ConfusionMatrix::new(3);
    cm.update(&pred, &label, 255).unwrap();
    assert_eq!(cm.total(), 5);
    // IoU: 1/2, 2/3, 1
    let want = (0.5 + 2.0 / 3.0 + 1.0) / 3.0;
    assert!((cm.miou().unwrap() - want).abs() < 1e-12);
    assert!(cm.update(&[3], &[0], 255).is_err());
}

#[test]
fn toy_dataset_is_seeded() {
    let cfg = ToyCfg {
        n_samples: 3,
        classes: 4,
        height: 48,
        width: 40,
        seed: 9,
    };
    let a = gen_toy_dataset(&cfg).unwrap();
    let b = gen_toy_dataset(&cfg).unwrap();
    assert_eq!(a, b);
    let c = gen_toy_dataset(&ToyCfg { seed: 10, ..cfg }).unwrap();
    assert_ne!(a, c);
    for s in &a {
        assert_eq!(s.image.shape(), &[3, 48, 40]);
        assert!(s.label.iter().all(|&l| l < 4));
        assert!(s.label.iter().any(|&l| l > 0));
    }
}

#[test]
fn hflip_twice_is_identity() {
    let s = gen_toy_sample(
        &ToyCfg {
            n_samples: 1,
            classes: 3,
            height: 20,
            width: 24,
            seed: 1,
        },
        0,
    )
    .unwrap()
    .to_sample();
    assert_eq!(hflip(&hflip(&s)), s);
    assert_eq!(rescale(&s, 1.0).unwrap(), s);
}

#[test]
fn augmented_samples_have_crop_size() {
    let s = gen_toy_sample(&ToyCfg::default(), 0).unwrap().to_sample();
    let cfg = AugmentCfg::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let a = augment(&s, &cfg, &mut rng).unwrap();
        assert_eq!(a.image.shape(), &[3, cfg.crop.0, cfg.crop.1]);
        assert_eq!(a.label.len(), cfg.crop.0 * cfg.crop.1);
    }
}

fn tiny_run(seed: u64) -> (Vec<HistoryRow>, ParamStore<f32>) {
    let data: Vec<Sample> = gen_toy_dataset(&ToyCfg {
        n_samples: 6,
        classes: 3,
        height: 32,
        width: 32,
        seed: 5,
    })
    .unwrap()
    .iter()
    .map(|s| s.to_sample())
    .collect();
    let mut net = build_cifrenet::<f32>(&NetworkCfg::mini(3), 1).unwrap();
    let mut cfg = TrainCfg {
        max_iter: 4,
        batch: 2,
        seed,
        ..TrainCfg::default()
    };
    cfg.augment.crop = (32, 32);
    cfg.augment.mean = dataset_mean(data.iter().map(|s| &s.image));
    let h = train_loop(&mut net, &data, &cfg, |_| {}).unwrap();
    (h, net.params)
}

#[test]
fn training_is_bitwise_reproducible() {
    let (h1, p1) = tiny_run(3);
    let (h2, p2) = tiny_run(3);
    assert_eq!(h1, h2);
    assert_eq!(p1, p2);
    let (h3, _) = tiny_run(4);
    assert_ne!(h1, h3);
    assert_eq!(h1.len(), 4);
    assert!(h1.iter().all(|r| r.loss.is_finite()));
    assert_eq!(h1[0].lr, 0.005);
}

#[test]
fn evaluation_counts_every_pixel() {
    let data: Vec<Sample> = gen_toy_dataset(&ToyCfg {
        n_samples: 2,
        classes: 3,
        height: 32,
        width: 24,
        seed: 5,
    })
    .unwrap()
    .iter()
    .map(|s| s.to_sample())
    .collect();
    let net = build_cifrenet::<f32>(&NetworkCfg::mini(3), 1).unwrap();
    let cm = evaluate(&net, &data, &[0.5; 3]).unwrap();
    assert_eq!(cm.total(), 2 * 32 * 24);
}

#[test]
fn sgd_decays_weights_only() {
    let mut store = ParamStore::<f32>::new();
    let w = store
        .push("w", ParamKind::ConvWeight, Tensor::new(&[1], vec![1.0]).unwrap())
        .unwrap();
    let g = store
        .push("g", ParamKind::BnGamma, Tensor::new(&[1], vec![1.0]).unwrap())
        .unwrap();
    let zero = Tensor::new(&[1], vec![0.0]).unwrap();
    let mut sgd = Sgd::new(0.9, 0.5);
    sgd.step(&mut store, &[(w, zero.clone()), (g, zero)], 0.1).unwrap();
    assert_eq!(store.get(w).value.data(), &[0.95]);
    assert_eq!(store.get(g).value.data(), &[1.0]);
}

fn default_split(n: usize) -> Vec<Sample> {
    let cfg = ToyCfg {
        n_samples: n,
        ..ToyCfg::default()
    };
    gen_toy_dataset(&cfg).unwrap().iter().map(|s| s.to_sample()).collect()
}

#[test]
fn initial_loss_near_log_k() {
    let data = default_split(8);
    let mut net = build_cifrenet::<f32>(&NetworkCfg::mini(4), 0).unwrap();
    let before = net.params.clone();
    let mut cfg = TrainCfg {
        max_iter: 1,
        ..TrainCfg::default()
    };
    cfg.augment.mean = dataset_mean(data.iter().map(|s| &s.image));
    let h = train_loop(&mut net, &data, &cfg, |_| {}).unwrap();
    let ln_k = 4f64.ln();
    assert!((h[0].loss - ln_k).abs() <= 0.3, "loss {} vs ln 4 = {ln_k}", h[0].loss);
    assert_ne!(net.params, before, "one iteration must move the parameters");
}

#[test]
fn toy_shapes_match_analytic_area() {
    for s in gen_toy_dataset(&ToyCfg::default()).unwrap() {
        assert!(s.label.contains(&0), "background missing");
        for shape in &s.shapes {
            let mut count = 0usize;
            for y in 0..96 {
                for x in 0..96 {
                    if shape.contains(y, x) {
                        assert_eq!(s.label[y * 96 + x], shape.class);
                        count += 1;
                    }
                }
            }
            let rel = (count as f64 - shape.area()).abs() / shape.area();
            assert!(rel <= 0.05, "{shape:?}: {count} px vs area {}", shape.area());
        }
    }
}

#[test]
fn pair_members_differ_in_size() {
    let data = gen_toy_dataset(&ToyCfg {
        classes: 5,
        ..ToyCfg::default()
    })
    .unwrap();
    let mut seen = [false; 2];
    for shape in data.iter().flat_map(|s| &s.shapes) {
        match class_size(5, shape.class as usize).unwrap() {
            SizeBand::Small => {
                seen[0] = true;
                assert!(shape.area() < 600.0, "{shape:?}");
            }
            SizeBand::Large => {
                seen[1] = true;
                assert!(shape.area() > 1400.0, "{shape:?}");
            }
        }
    }
    assert_eq!(seen, [true, true]);
    // a trailing unpaired class takes either size
    assert_eq!(class_size(4, 3), None);
    assert_eq!(class_size(4, 2), Some(SizeBand::Large));
}

fn confusion(k: usize) -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(0u64..50, k * k)
}

proptest! {
    #[test]
    fn miou_invariant_under_class_relabeling(counts in confusion(3), perm in Just([2usize, 0, 1])) {
        let a = ConfusionMatrix::from_counts(3, counts.clone()).unwrap();
        let mut permuted = vec![0; 9];
        for t in 0..3 {
            for p in 0..3 {
                permuted[perm[t] * 3 + perm[p]] = counts[t * 3 + p];
            }
        }
        let b = ConfusionMatrix::from_counts(3, permuted).unwrap();
        match (a.miou(), b.miou()) {
            (Ok(x), Ok(y)) => prop_assert!((x - y).abs() < 1e-12),
            (x, y) => prop_assert_eq!(x.is_err(), y.is_err()),
        }
    }

    #[test]
    fn confusion_merge_is_additive(a in prop::collection::vec(0u8..3, 20), b in prop::collection::vec(0u8..3, 20)) {
        let mut whole = ConfusionMatrix::new(3);
        whole.update(&a, &b, 255).unwrap();
        whole.update(&b, &a, 255).unwrap();
        let mut x = ConfusionMatrix::new(3);
        x.update(&a, &b, 255).unwrap();
        let mut y = ConfusionMatrix::new(3);
        y.update(&b, &a, 255).unwrap();
        x.merge(&y).unwrap();
        prop_assert_eq!(x, whole);
    }

    #[test]
    fn miou_bounded(counts in confusion(4)) {
        let cm = ConfusionMatrix::from_counts(4, counts).unwrap();
        if let Ok(m) = cm.miou() {
            prop_assert!((0.0..=1.0).contains(&m));
        }
    }

    #[test]
    fn poly_is_non_increasing(max in 1usize..5000, power in 0.1f64..3.0) {
        let mut prev = f64::INFINITY;
        for it in (0..=max).step_by((max / 17).max(1)) {
            let lr = poly_lr(it, max, 0.005, power).unwrap();
            prop_assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn augmentation_keeps_label_set(index in 0usize..20, seed in any::<u64>()) {
        let s = gen_toy_sample(&ToyCfg::default(), index).unwrap().to_sample();
        let cfg = AugmentCfg::default();
        let a = augment(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for l in a.label {
            prop_assert!(l == 255 || s.label.contains(&l), "label {}", l);
        }
    }

    #[test]
    fn zero_lr_leaves_params(p in prop::collection::vec(-5.0f32..5.0, 1..8), seed in any::<u64>()) {
        let g: Vec<f32> = p.iter().map(|v| v * 0.5 + (seed % 7) as f32).collect();
        let mut param = p.clone();
        let mut vel = vec![0.0; p.len()];
        sgd_update(&mut param, &g, &mut vel, 0.0, 0.9, 5e-4);
        prop_assert_eq!(param, p);
    }
}
