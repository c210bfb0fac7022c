//! Central finite-difference gradient checks in 64-bit precision.
//!
//! Every case builds a small graph from seeded random inputs (and, for the
//! blocks, a seeded parameter store), reduces its output to the scalar
//! `L = Σ out ⊙ R` with a fixed random `R`, and compares the tape gradient of
//! `L` with respect to every input element and every trainable parameter
//! against `(L(θ + h) − L(θ − h)) / 2h`.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{Builder, Dsp, DspSpec, InvertedResidual, InvertedResidualSpec, Lrm, Mcim, McimSpec, Ratio};
use crate::error::{bail, Result};
use crate::ops::{BatchNormState, ConvSpec, Mode, IGNORE_INDEX};
use crate::params::{ParamId, ParamStore, Session};
use crate::tape::Var;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
/// Denominator floor of the relative error, so that near-zero gradients are
/// compared absolutely.
pub const REL_FLOOR: f64 = 1e-3;
/// Minimum distance of every PReLU input from zero before a draw is accepted.
pub const KINK_MARGIN: f64 = 1e-4;
const MAX_REDRAWS: u64 = 32;

/// `∂f/∂x` by central differences, one coordinate at a time.
pub fn finite_diff_grad(mut f: impl FnMut(&[f64]) -> Result<f64>, x: &[f64], step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        bail!(Contract, "finite-difference step must be positive, got {step}");
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let up = f(&probe)?;
        probe[i] = x[i] - step;
        let down = f(&probe)?;
        probe[i] = x[i];
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub seed: u64,
    pub max_rel_err: f64,
    /// Number of scalar coordinates compared.
    pub checked: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= GRAD_TOL
    }
}

type Forward = Box<dyn Fn(&mut Session<'_, f64>, &[Var]) -> Result<Var>>;

/// One differentiable computation with its inputs and parameters.
pub struct Case {
    pub inputs: Vec<Tensor<f64>>,
    pub store: ParamStore<f64>,
    pub mode: Mode,
    forward: Forward,
}

impl Case {
    pub fn new(
        inputs: Vec<Tensor<f64>>,
        store: ParamStore<f64>,
        mode: Mode,
        forward: impl Fn(&mut Session<'_, f64>, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        Self {
            inputs,
            store,
            mode,
            forward: Box::new(forward),
        }
    }

    /// `Σ out ⊙ weights`, evaluated without recording gradients.
    fn loss(&self, inputs: &[Tensor<f64>], store: &mut ParamStore<f64>, weights: &Tensor<f64>) -> Result<f64> {
        let mut s = Session::with_tracking(store, self.mode, false);
        let vars: Vec<Var> = inputs.iter().map(|t| s.graph.constant(t.clone())).collect();
        let out = (self.forward)(&mut s, &vars)?;
        Ok(dot(s.graph.value(out), weights))
    }
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Tape gradients for the inputs and trainable parameters, plus the closest
/// PReLU input to zero.
struct Analytic {
    weights: Tensor<f64>,
    inputs: Vec<Tensor<f64>>,
    params: Vec<(ParamId, Tensor<f64>)>,
    kink: Option<f64>,
}

fn analytic(case: &Case, rng: &mut ChaCha8Rng) -> Result<Analytic> {
    let mut store = case.store.clone();
    let mut s = Session::new(&mut store, case.mode);
    let vars: Vec<Var> = case.inputs.iter().map(|t| s.graph.variable(t.clone())).collect();
    let out = (case.forward)(&mut s, &vars)?;
    let weights = uniform(rng, s.graph.shape(out), 1.0)?;
    let w = s.graph.constant(weights.clone());
    let prod = s.graph.mul(out, w)?;
    let loss = s.graph.sum(prod);
    let grads = s.graph.backward(loss)?;
    Ok(Analytic {
        inputs: vars.iter().map(|&v| grads.wrt(&s.graph, v)).collect(),
        params: s.param_grads(&grads),
        kink: s.graph.prelu_kink_distance(),
        weights,
    })
}

/// Compares tape and finite-difference gradients for every coordinate.
pub fn check_case(name: &'static str, seed: u64, case: &Case) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
    let a = analytic(case, &mut rng)?;
    if a.kink.is_some_and(|d| d < KINK_MARGIN) {
        bail!(Contract, "`{name}` seed {seed}: a PReLU input lies within {KINK_MARGIN} of zero");
    }
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut store = case.store.clone();
    for (i, grad) in a.inputs.iter().enumerate() {
        let mut inputs = case.inputs.clone();
        let shape = inputs[i].shape().to_vec();
        let numeric = finite_diff_grad(
            |x| {
                inputs[i] = Tensor::new(&shape, x.to_vec())?;
                case.loss(&inputs, &mut store, &a.weights)
            },
            case.inputs[i].data(),
            FD_STEP,
        )?;
        worst = worst.max(max_relative_error(grad.data(), &numeric));
        checked += numeric.len();
    }
    for (id, grad) in &a.params {
        let base = case.store.get(*id).value.clone();
        let numeric = finite_diff_grad(
            |x| {
                store.get_mut(*id).value.data_mut().copy_from_slice(x);
                case.loss(&case.inputs, &mut store, &a.weights)
            },
            base.data(),
            FD_STEP,
        )?;
        store.get_mut(*id).value = base;
        worst = worst.max(max_relative_error(grad.data(), &numeric));
        checked += numeric.len();
    }
    Ok(CheckResult {
        name,
        seed,
        max_rel_err: worst,
        checked,
    })
}

/// Draws a case from `seed`, redrawing with derived seeds while any PReLU
/// input sits too close to its kink.
pub fn run_case(name: &'static str, build: fn(u64) -> Result<Case>, seed: u64) -> Result<CheckResult> {
    for attempt in 0..MAX_REDRAWS {
        let draw = seed.wrapping_add(attempt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let case = build(draw)?;
        let mut rng = ChaCha8Rng::seed_from_u64(draw ^ 0x6772_6164);
        if analytic(&case, &mut rng)?.kink.is_some_and(|d| d < KINK_MARGIN) {
            continue;
        }
        let mut res = check_case(name, draw, &case)?;
        res.seed = seed;
        return Ok(res);
    }
    bail!(Contract, "`{name}`: no kink-free draw in {MAX_REDRAWS} attempts from seed {seed}")
}

pub fn run_suite(seeds: impl IntoIterator<Item = u64> + Clone) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for &(name, build) in CASES {
        for seed in seeds.clone() {
            out.push(run_case(name, build, seed)?);
        }
    }
    Ok(out)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Result<Tensor<f64>> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect())
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Randomizes every parameter of a freshly built store so that gradients of
/// zero-initialized biases and unit affine terms are exercised too.
fn jitter(store: &mut ParamStore<f64>, r: &mut ChaCha8Rng) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let p = store.get_mut(id);
        let positive = p.kind == crate::params::ParamKind::RunningVar;
        for v in p.value.data_mut() {
            *v = if positive {
                r.gen_range(0.5..1.5)
            } else {
                *v + r.gen_range(-0.2..0.2)
            };
        }
    }
}

fn op_case(
    seed: u64,
    shapes: &[&[usize]],
    forward: impl Fn(&mut Session<'_, f64>, &[Var]) -> Result<Var> + 'static,
) -> Result<Case> {
    let mut r = rng(seed);
    let inputs = shapes.iter().map(|s| uniform(&mut r, s, 1.0)).collect::<Result<_>>()?;
    Ok(Case::new(inputs, ParamStore::new(), Mode::Train, forward))
}

fn conv_case(seed: u64, x: &[usize], spec: ConvSpec) -> Result<Case> {
    let w = spec.weight_shape();
    if spec.has_bias {
        op_case(seed, &[x, &w, &[spec.out_channels]], move |s, v| {
            s.graph.conv2d(v[0], v[1], Some(v[2]), &spec)
        })
    } else {
        op_case(seed, &[x, &w], move |s, v| s.graph.conv2d(v[0], v[1], None, &spec))
    }
}

fn block_case<B: 'static>(
    seed: u64,
    inputs: &[&[usize]],
    mode: Mode,
    build: impl FnOnce(&mut Builder<'_, f64>) -> Result<B>,
    forward: impl Fn(&B, &mut Session<'_, f64>, &[Var]) -> Result<Var> + 'static,
) -> Result<Case> {
    let mut store = ParamStore::new();
    let block = build(&mut Builder::new(&mut store, seed))?;
    let mut r = rng(seed ^ 0x626c_6f63);
    jitter(&mut store, &mut r);
    let inputs = inputs.iter().map(|s| uniform(&mut r, s, 1.0)).collect::<Result<_>>()?;
    Ok(Case::new(inputs, store, mode, move |s, v| forward(&block, s, v)))
}

fn bn_case(seed: u64, mode: Mode) -> Result<Case> {
    let mut r = rng(seed ^ 0x626e);
    let state = BatchNormState {
        running_mean: (0..3).map(|_| r.gen_range(-0.5..0.5)).collect(),
        running_var: (0..3).map(|_| r.gen_range(0.5..1.5)).collect(),
        ..BatchNormState::new(3)
    };
    op_case(seed, &[&[2, 3, 4, 3], &[3], &[3]], move |s, v| {
        s.graph.batch_norm(v[0], v[1], v[2], &mut state.clone(), mode)
    })
}

fn dsp_spec() -> Result<DspSpec> {
    Ok(DspSpec::new(10, Ratio::new(1, 5)?, &[1, 2, 3, 5], 2, true))
}

/// Named case constructors exercised by [`run_suite`].
pub const CASES: &[(&str, fn(u64) -> Result<Case>)] = &[
    ("conv_regular", |seed| conv_case(seed, &[2, 3, 6, 6], ConvSpec::new(3, 4, 3).padding(1))),
    ("conv_strided", |seed| {
        conv_case(seed, &[2, 3, 7, 7], ConvSpec::new(3, 4, 3).padding(1).stride(2))
    }),
    ("conv_grouped_dilated", |seed| {
        conv_case(seed, &[2, 4, 7, 6], ConvSpec::new(4, 6, 3).groups(2).dilation(2).padding(2))
    }),
    ("conv_depthwise", |seed| conv_case(seed, &[2, 4, 5, 5], ConvSpec::depthwise(4, 3, 1))),
    ("conv_pointwise", |seed| conv_case(seed, &[2, 5, 4, 3], ConvSpec::pointwise(5, 3))),
    ("conv_bias", |seed| {
        conv_case(seed, &[2, 3, 5, 5], ConvSpec::new(3, 2, 3).padding(1).bias(true))
    }),
    ("depthwise_separable", |seed| {
        op_case(seed, &[&[2, 3, 6, 6], &[3, 1, 3, 3], &[4, 3, 1, 1]], |s, v| {
            s.graph.depthwise_separable(v[0], v[1], v[2], 2)
        })
    }),
    ("batch_norm_train", |seed| bn_case(seed, Mode::Train)),
    ("batch_norm_infer", |seed| bn_case(seed, Mode::Infer)),
    ("prelu", |seed| op_case(seed, &[&[2, 3, 3, 3], &[3]], |s, v| s.graph.prelu(v[0], v[1]))),
    ("global_avg_pool", |seed| op_case(seed, &[&[2, 3, 4, 5]], |s, v| s.graph.global_avg_pool(v[0]))),
    ("bilinear_upsample", |seed| {
        op_case(seed, &[&[2, 2, 4, 5]], |s, v| s.graph.bilinear_upsample(v[0], 7, 9))
    }),
    ("channel_shuffle", |seed| op_case(seed, &[&[2, 6, 3, 2]], |s, v| s.graph.channel_shuffle(v[0], 3))),
    ("softmax", |seed| op_case(seed, &[&[3, 5, 1, 1]], |s, v| s.graph.softmax_channels(v[0]))),
    ("linear", |seed| op_case(seed, &[&[3, 5], &[4, 5], &[4]], |s, v| s.graph.linear(v[0], v[1], Some(v[2])))),
    ("cross_entropy", |seed| {
        let mut r = rng(seed ^ 0x6365);
        let labels: Vec<u8> = (0..18)
            .map(|_| match r.gen_range(0..5u8) {
                4 => IGNORE_INDEX,
                k => k,
            })
            .collect();
        op_case(seed, &[&[2, 4, 3, 3]], move |s, v| s.graph.cross_entropy(v[0], &labels, IGNORE_INDEX))
    }),
    ("add_broadcast", |seed| op_case(seed, &[&[2, 3, 3, 4], &[2, 3, 1, 1]], |s, v| s.graph.add(v[0], v[1]))),
    ("mul_broadcast", |seed| op_case(seed, &[&[2, 3, 3, 4], &[1, 3, 1, 1]], |s, v| s.graph.mul(v[0], v[1]))),
    ("concat_slice", |seed| {
        op_case(seed, &[&[2, 2, 3, 3], &[2, 3, 3, 3]], |s, v| {
            let c = s.graph.concat_channels(&[v[0], v[1]])?;
            let mid = s.graph.slice_channels(c, 1, 3)?;
            s.graph.mul(mid, mid)
        })
    }),
    ("inverted_residual", |seed| {
        let spec = InvertedResidualSpec {
            in_ch: 4,
            out_ch: 4,
            stride: 1,
            expansion: 3,
            dilation: 2,
        };
        block_case(
            seed,
            &[&[2, 4, 5, 5]],
            Mode::Train,
            |b| InvertedResidual::build(b, "ir", spec),
            |blk, s, v| blk.forward(s, v[0]),
        )
    }),
    ("inverted_residual_strided", |seed| {
        let spec = InvertedResidualSpec {
            in_ch: 3,
            out_ch: 5,
            stride: 2,
            expansion: 2,
            dilation: 1,
        };
        block_case(
            seed,
            &[&[2, 3, 6, 6]],
            Mode::Train,
            |b| InvertedResidual::build(b, "ir", spec),
            |blk, s, v| blk.forward(s, v[0]),
        )
    }),
    ("lrm", |seed| {
        block_case(
            seed,
            &[&[2, 4, 5, 5], &[2, 8, 5, 5]],
            Mode::Train,
            |b| Lrm::build(b, "lrm", 4, 8, 4),
            |blk, s, v| blk.forward(s, v[0], v[1]),
        )
    }),
    ("dsp", |seed| {
        block_case(
            seed,
            &[&[2, 10, 5, 5]],
            Mode::Train,
            |b| Dsp::build(b, "dsp", dsp_spec()?),
            |blk, s, v| blk.forward(s, v[0]),
        )
    }),
    ("mcim", |seed| {
        block_case(
            seed,
            &[&[3, 10, 5, 5]],
            Mode::Train,
            |b| {
                let spec = McimSpec {
                    dsp_s: dsp_spec()?,
                    dsp_m: DspSpec::new(10, Ratio::new(1, 5)?, &[2, 3, 5, 7], 2, true),
                    dsp_l: DspSpec::new(10, Ratio::new(1, 5)?, &[3, 5, 7, 9], 2, true),
                    global_ch: 3,
                };
                Mcim::build(b, "mcim", spec)
            },
            |blk, s, v| blk.forward(s, v[0]),
        )
    }),
];

/// Human-readable one-line summary per result.
pub fn describe(r: &CheckResult) -> alloc::string::String {
    format!(
        "{:<26} seed {:>3}  max rel err {:.2e} over {} coords  {}",
        r.name,
        r.seed,
        r.max_rel_err,
        r.checked,
        if r.passed() { "ok" } else { "FAIL" }
    )
}
