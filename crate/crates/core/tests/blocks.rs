use cifrenet_core::blocks::{Builder, Dsp, DspSpec, InvertedResidual, InvertedResidualSpec, Lrm, Mcim, McimSpec, Ratio};
use cifrenet_core::ops::Mode;
use cifrenet_core::params::{ParamStore, Session};
use cifrenet_core::{Error, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(seed: u64, shape: &[usize]) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap()
}

fn dsp_spec(channels: usize, dilations: &[usize]) -> DspSpec {
    DspSpec::new(channels, Ratio::new(1, 5).unwrap(), dilations, 4, true)
}

#[test]
fn dsp_rejects_width_changing_config() {
    // 40/5 = 8 per path, 3 paths + pool = 32 != 40
    let spec = dsp_spec(40, &[1, 2, 3]);
    assert!(matches!(spec.validate(), Err(Error::Residual { input: 40, output: 32 })));
    let mut store = ParamStore::<f32>::new();
    assert!(Dsp::build(&mut Builder::new(&mut store, 0), "dsp", spec).is_err());
}

#[test]
fn dsp_rejects_mismatched_input() {
    let mut store = ParamStore::<f32>::new();
    let dsp = Dsp::build(&mut Builder::new(&mut store, 0), "dsp", dsp_spec(40, &[1, 2, 3, 5])).unwrap();
    let mut s = Session::infer(&store);
    let x = s.input(random(1, &[1, 48, 4, 4]));
    assert!(matches!(dsp.forward(&mut s, x), Err(Error::Residual { input: 48, output: 40 })));
}

#[test]
fn dsp_output_is_input_plus_branch() {
    let mut store = ParamStore::<f32>::new();
    let dsp = Dsp::build(&mut Builder::new(&mut store, 4), "dsp", dsp_spec(40, &[1, 2, 3, 5])).unwrap();
    let mut s = Session::new(&mut store, Mode::Train);
    let xt = random(2, &[2, 40, 6, 7]);
    let x = s.input(xt.clone());
    let o = dsp.forward_detailed(&mut s, x).unwrap();
    assert_eq!(o.paths.len(), 5);
    let (out, branch) = (s.graph.value(o.out), s.graph.value(o.branch));
    assert_eq!(out.shape(), xt.shape());
    for ((&y, &x), &b) in out.data().iter().zip(xt.data()).zip(branch.data()) {
        assert_eq!(y, x + b);
    }
}

/// The pooled path is constant over each plane.
#[test]
fn dsp_pool_path_is_spatially_constant() {
    let mut store = ParamStore::<f32>::new();
    let dsp = Dsp::build(&mut Builder::new(&mut store, 4), "dsp", dsp_spec(20, &[1, 2, 3, 5])).unwrap();
    let mut s = Session::infer(&store);
    let x = s.input(random(3, &[1, 20, 5, 5]));
    let o = dsp.forward_detailed(&mut s, x).unwrap();
    let pool = s.graph.value(*o.paths.last().unwrap());
    for plane in pool.data().chunks(25) {
        assert!(plane.iter().all(|&v| v == plane[0]));
    }
}

#[test]
fn inverted_residual_shortcut_only_when_shapes_match() {
    let mut store = ParamStore::<f32>::new();
    let mut b = Builder::new(&mut store, 0);
    let same = InvertedResidualSpec {
        in_ch: 8,
        out_ch: 8,
        stride: 1,
        expansion: 6,
        dilation: 2,
    };
    let down = InvertedResidualSpec {
        stride: 2,
        ..same
    };
    let wide = InvertedResidualSpec {
        out_ch: 12,
        ..same
    };
    assert!(same.has_shortcut());
    assert!(!down.has_shortcut());
    assert!(!wide.has_shortcut());
    let blk = InvertedResidual::build(&mut b, "ir", same).unwrap();
    let ds = InvertedResidual::build(&mut b, "ds", down).unwrap();
    let mut s = Session::new(&mut store, Mode::Train);
    let xt = random(5, &[2, 8, 6, 6]);
    let x = s.input(xt.clone());
    let (branch, out) = blk.forward_parts(&mut s, x).unwrap();
    for ((&y, &x), &b) in s.graph.value(out).data().iter().zip(xt.data()).zip(s.graph.value(branch).data()) {
        assert_eq!(y, x + b);
    }
    let y = ds.forward(&mut s, x).unwrap();
    assert_eq!(s.graph.shape(y), &[2, 8, 3, 3]);
}

#[test]
fn lrm_attention_sums_to_one() {
    let mut store = ParamStore::<f32>::new();
    let lrm = Lrm::build(&mut Builder::new(&mut store, 9), "lrm", 24, 320, 16).unwrap();
    let mut s = Session::new(&mut store, Mode::Train);
    let fs = s.input(random(1, &[3, 24, 6, 5]));
    let fa = s.input(random(2, &[3, 320, 6, 5]));
    let o = lrm.forward_detailed(&mut s, fs, fa).unwrap();
    let att = s.graph.value(o.attention);
    assert_eq!(att.shape(), &[3, 320, 1, 1]);
    for row in att.data().chunks(320) {
        let total: f64 = row.iter().map(|&v| v as f64).sum();
        assert!((total - 1.0).abs() <= 1e-6, "{total}");
        assert!(row.iter().all(|&v| v > 0.0));
    }
    assert_eq!(s.graph.shape(o.out), &[3, 320, 6, 5]);
}

/// `out = refined ⊙ softmax(...) + deep`, recomputed element by element.
#[test]
fn lrm_composition() {
    let mut store = ParamStore::<f32>::new();
    let lrm = Lrm::build(&mut Builder::new(&mut store, 9), "lrm", 4, 8, 4).unwrap();
    let mut s = Session::infer(&store);
    let fa_t = random(2, &[2, 8, 3, 3]);
    let fs = s.input(random(1, &[2, 4, 3, 3]));
    let fa = s.input(fa_t.clone());
    let o = lrm.forward_detailed(&mut s, fs, fa).unwrap();
    let (refined, att, out) = (s.graph.value(o.refined), s.graph.value(o.attention), s.graph.value(o.out));
    for n in 0..2 {
        for c in 0..8 {
            for i in 0..3 {
                for j in 0..3 {
                    let want = refined.at(&[n, c, i, j]) * att.at(&[n, c, 0, 0]) + fa_t.at(&[n, c, i, j]);
                    assert_eq!(out.at(&[n, c, i, j]), want);
                }
            }
        }
    }
}

#[test]
fn lrm_rejects_mismatched_resolution() {
    let mut store = ParamStore::<f32>::new();
    let lrm = Lrm::build(&mut Builder::new(&mut store, 9), "lrm", 4, 8, 4).unwrap();
    let mut s = Session::infer(&store);
    let fs = s.input(random(1, &[1, 4, 6, 6]));
    let fa = s.input(random(2, &[1, 8, 3, 3]));
    assert!(lrm.forward(&mut s, fs, fa).is_err());
}

fn small_mcim(store: &mut ParamStore<f32>) -> Mcim {
    let spec = McimSpec {
        dsp_s: dsp_spec(20, &[1, 2, 3, 5]),
        dsp_m: dsp_spec(20, &[7, 9, 11, 13]),
        dsp_l: dsp_spec(20, &[17, 19, 21, 23]),
        global_ch: 5,
    };
    Mcim::build(&mut Builder::new(store, 6), "mcim", spec).unwrap()
}

/// Each block feeds the next, the three outputs are summed and the global
/// branch is appended.
#[test]
fn mcim_cascade_composition() {
    let mut store = ParamStore::<f32>::new();
    let mcim = small_mcim(&mut store);
    let mut s = Session::infer(&store);
    let x = s.input(random(4, &[2, 20, 8, 8]));
    let o = mcim.forward_detailed(&mut s, x).unwrap();
    let stage0 = s.graph.value(o.stages[0]).clone();
    let stage1 = s.graph.value(o.stages[1]).clone();

    let mut t = Session::infer(&store);
    let x0 = t.input(stage0.clone());
    let again = mcim.dsp[1].forward(&mut t, x0).unwrap();
    assert_eq!(t.graph.value(again).data(), stage1.data());

    let out = s.graph.value(o.out);
    assert_eq!(out.shape(), &[2, 25, 8, 8]);
    let (a, b, c) = (
        s.graph.value(o.stages[0]),
        s.graph.value(o.stages[1]),
        s.graph.value(o.stages[2]),
    );
    let sum = s.graph.value(o.sum);
    for i in 0..sum.len() {
        assert_eq!(sum.data()[i], a.data()[i] + b.data()[i] + c.data()[i]);
    }
    assert_eq!(out.slice_channels(0, 20).unwrap().data(), sum.data());
    let global = out.slice_channels(20, 5).unwrap();
    for plane in global.data().chunks(64) {
        assert!(plane.iter().all(|&v| v == plane[0]));
    }
}

#[test]
fn mcim_rejects_wrong_channels() {
    let mut store = ParamStore::<f32>::new();
    let mcim = small_mcim(&mut store);
    let mut s = Session::infer(&store);
    let x = s.input(random(4, &[1, 16, 8, 8]));
    assert!(mcim.forward(&mut s, x).is_err());
}
