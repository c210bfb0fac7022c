//! Analytic cost model: parameter counts, multiply-accumulate counts and
//! receptive fields.
//!
//! MAC formulas: a convolution costs `Cout·(Cin/g)·k²·Hout·Wout` per sample, a
//! linear layer `Cout·Cin`, batch norm, PReLU, pooling reads, additions and
//! softmax one per element, and bilinear resampling four per output element.
//! Concatenation and channel shuffle move data only and cost nothing.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;
use core::iter::Sum;
use core::ops::{Add, AddAssign};

use crate::blocks::{build_cifrenet, DspSpec, McimSpec, Network, NetworkCfg};
use crate::error::{bail, Result};
use crate::ops::conv::ConvSpec;
use crate::scalar::Scalar;

pub type Shape4 = [usize; 4];

/// Parameter elements split into convolution/linear weights, biases and
/// normalization parameters (BN affine and PReLU slopes).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParamCount {
    pub weights: u64,
    pub bias: u64,
    pub norm: u64,
}

impl ParamCount {
    pub fn total(&self) -> u64 {
        self.weights + self.bias + self.norm
    }
}

impl Add for ParamCount {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            weights: self.weights + o.weights,
            bias: self.bias + o.bias,
            norm: self.norm + o.norm,
        }
    }
}

impl AddAssign for ParamCount {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sum for ParamCount {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// Cost of one traced layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostRow {
    pub name: String,
    /// Weight elements (biases and normalization excluded).
    pub params: u64,
    pub bias: u64,
    pub norm_params: u64,
    pub macs: u64,
    /// Receptive field of the layer alone.
    pub rf: u64,
    pub out_shape: Vec<usize>,
}

impl CostRow {
    pub fn new(name: &str, out: Shape4) -> Self {
        Self {
            name: name.into(),
            params: 0,
            bias: 0,
            norm_params: 0,
            macs: 0,
            rf: 1,
            out_shape: out.to_vec(),
        }
    }

    pub fn shape(mut self, shape: Vec<usize>) -> Self {
        self.out_shape = shape;
        self
    }

    pub fn params(mut self, p: ParamCount) -> Self {
        self.params = p.weights;
        self.bias = p.bias;
        self.norm_params = p.norm;
        self
    }

    pub fn macs(mut self, macs: u64) -> Self {
        self.macs = macs;
        self
    }

    pub fn rf(mut self, rf: u64) -> Self {
        self.rf = rf;
        self
    }
}

/// Weight count of a convolution (plus its bias, reported separately).
pub fn conv_params(spec: &ConvSpec) -> Result<ParamCount> {
    spec.validate()?;
    Ok(ParamCount {
        weights: spec.weight_count() as u64,
        bias: if spec.has_bias { spec.out_channels as u64 } else { 0 },
        norm: 0,
    })
}

/// `Cout·(Cin/g)·k²·Hout·Wout` per sample.
pub fn conv_macs(spec: &ConvSpec, input: Shape4) -> Result<u64> {
    spec.validate()?;
    let [n, c, h, w] = input;
    if c != spec.in_channels {
        bail!(Shape, "convolution expects {} channels, got {c}", spec.in_channels);
    }
    let (oh, ow) = spec.output_hw(h, w)?;
    let per_out = (spec.in_channels / spec.groups * spec.kernel * spec.kernel) as u64;
    Ok(n as u64 * spec.out_channels as u64 * per_out * (oh * ow) as u64)
}

/// Depthwise `k×k` followed by a 1×1 convolution.
pub fn depthwise_separable_params(in_channels: usize, out_channels: usize, kernel: usize) -> Result<u64> {
    let dw = conv_params(&ConvSpec::depthwise(in_channels, kernel, 1))?;
    let pw = conv_params(&ConvSpec::pointwise(in_channels, out_channels))?;
    Ok(dw.weights + pw.weights)
}

fn checked_reduced(spec: &DspSpec) -> Result<u64> {
    let cr = spec.reduced()?;
    if spec.groups == 0 || spec.channels % spec.groups != 0 || cr % spec.groups != 0 {
        bail!(Spec, "group count {} must divide {} and {cr}", spec.groups, spec.channels);
    }
    Ok(cr as u64)
}

/// DSP block: grouped 1×1 reduction `Ci·Cr/g`, then per path a 3×3 depthwise
/// `9·Cr` and a 1×1 `Cr²`. Every convolution is followed by BN + PReLU
/// (`3·Cr` normalization parameters each).
pub fn dsp_params(spec: &DspSpec) -> Result<ParamCount> {
    let cr = checked_reduced(spec)?;
    let (ci, n, g) = (spec.channels as u64, spec.n_paths as u64, spec.groups as u64);
    Ok(ParamCount {
        weights: ci * cr / g + n * (9 * cr + cr * cr),
        bias: 0,
        norm: 3 * cr * (1 + 2 * n),
    })
}

/// The same pyramid built from regular convolutions: a dense 1×1 reduction
/// `Ci·Cr` and a dense 3×3 per path, `9·Cr²`.
pub fn regular_dsp_params(spec: &DspSpec) -> Result<u64> {
    let cr = spec.reduced()? as u64;
    Ok(spec.channels as u64 * cr + 9 * cr * cr * spec.n_paths as u64)
}

/// Three DSP blocks plus the image-level 1×1 convolution with BN + PReLU.
pub fn mcim_params(spec: &McimSpec) -> Result<ParamCount> {
    spec.validate()?;
    let dsp = spec.dsps().into_iter().map(dsp_params).sum::<Result<ParamCount>>()?;
    let (c, gc) = (spec.channels() as u64, spec.global_ch as u64);
    Ok(dsp + ParamCount {
        weights: c * gc,
        bias: 0,
        norm: 3 * gc,
    })
}

/// Parameters of the network described by `cfg`.
pub fn network_params(cfg: &NetworkCfg) -> Result<ParamCount> {
    let net = build_cifrenet::<f32>(cfg, 0)?;
    Ok(net.arch.param_count())
}

/// Receptive field of one `k×k` layer at dilation `d`: `(d−1)(k−1)+k`.
pub fn layer_rf(kernel: usize, dilation: usize) -> u64 {
    ((dilation - 1) * (kernel - 1) + kernel) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RfLayer {
    pub kernel: usize,
    pub dilation: usize,
    pub stride: usize,
}

impl RfLayer {
    pub fn new(kernel: usize, dilation: usize, stride: usize) -> Self {
        Self {
            kernel,
            dilation,
            stride,
        }
    }
}

fn check_rf_layers(layers: &[RfLayer]) -> Result<()> {
    if layers.is_empty() {
        bail!(Contract, "receptive field of an empty layer list");
    }
    if let Some(l) = layers.iter().find(|l| l.kernel == 0 || l.dilation == 0 || l.stride == 0) {
        bail!(Contract, "kernel, dilation and stride must be positive: {l:?}");
    }
    Ok(())
}

/// Receptive field of a layer sequence, accounting for strides: each layer
/// adds `(R_i − 1)` times the product of the strides before it.
pub fn receptive_field(layers: &[RfLayer]) -> Result<u64> {
    check_rf_layers(layers)?;
    let mut rf = 1u64;
    let mut jump = 1u64;
    for l in layers {
        rf += (layer_rf(l.kernel, l.dilation) - 1) * jump;
        jump *= l.stride as u64;
    }
    Ok(rf)
}

/// Composition that treats every layer as stride 1: `Σ R_i − (count − 1)`.
pub fn receptive_field_stride1(layers: &[RfLayer]) -> Result<u64> {
    check_rf_layers(layers)?;
    let sum: u64 = layers.iter().map(|l| layer_rf(l.kernel, l.dilation)).sum();
    Ok(sum - (layers.len() as u64 - 1))
}

/// Largest field of view through a cascade of dilated blocks: each block
/// contributes its widest path.
pub fn cascade_receptive_field(dilation_sets: &[Vec<usize>], kernel: usize) -> Result<u64> {
    let layers: Vec<RfLayer> = dilation_sets
        .iter()
        .map(|set| match set.iter().max() {
            Some(&d) => Ok(RfLayer::new(kernel, d, 1)),
            None => bail!(Contract, "empty dilation set"),
        })
        .collect::<Result<_>>()?;
    receptive_field_stride1(&layers)
}

pub fn mcim_receptive_field(spec: &McimSpec) -> u64 {
    let sets: Vec<Vec<usize>> = spec.dsps().iter().map(|d| d.dilations.clone()).collect();
    cascade_receptive_field(&sets, 3).expect("validated sets are non-empty")
}

/// Per-layer costs of a network at one input shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub input_shape: Shape4,
    pub rows: Vec<CostRow>,
    pub mcim_rf: Option<u64>,
}

impl CostReport {
    pub fn total_params(&self) -> u64 {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn total_bias(&self) -> u64 {
        self.rows.iter().map(|r| r.bias).sum()
    }

    pub fn total_norm_params(&self) -> u64 {
        self.rows.iter().map(|r| r.norm_params).sum()
    }

    /// Every trainable element: weights, biases and normalization parameters.
    pub fn trainable_params(&self) -> u64 {
        self.total_params() + self.total_bias() + self.total_norm_params()
    }

    pub fn total_macs(&self) -> u64 {
        self.rows.iter().map(|r| r.macs).sum()
    }

    /// Two floating-point operations per multiply-accumulate.
    pub fn flops(&self) -> u64 {
        2 * self.total_macs()
    }

    /// `name,params,macs,rf,out_shape` with a header row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,params,macs,rf,out_shape\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.name, r.params, r.macs, r.rf, shape_str(&r.out_shape));
        }
        s
    }

    /// Aligned table with totals.
    pub fn to_table(&self) -> String {
        let name_w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(5);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<name_w$} {:>10} {:>8} {:>6} {:>14} {:>4}  out_shape",
            "layer", "params", "norm", "bias", "macs", "rf"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<name_w$} {:>10} {:>8} {:>6} {:>14} {:>4}  {}",
                r.name,
                r.params,
                r.norm_params,
                r.bias,
                r.macs,
                r.rf,
                shape_str(&r.out_shape)
            );
        }
        let _ = writeln!(
            s,
            "{:<name_w$} {:>10} {:>8} {:>6} {:>14}",
            "total",
            self.total_params(),
            self.total_norm_params(),
            self.total_bias(),
            self.total_macs()
        );
        let _ = writeln!(s, "input: {}", shape_str(&self.input_shape));
        let _ = writeln!(s, "trainable parameters: {}", self.trainable_params());
        let _ = writeln!(
            s,
            "MACs: {} ({:.3} G); FLOPs at 2 per MAC: {} ({:.3} G)",
            self.total_macs(),
            self.total_macs() as f64 / 1e9,
            self.flops(),
            self.flops() as f64 / 1e9
        );
        if let Some(rf) = self.mcim_rf {
            let _ = writeln!(s, "context module receptive field: {rf}");
        }
        s
    }
}

pub fn shape_str(shape: &[usize]) -> String {
    let parts: Vec<String> = shape.iter().map(|d| format!("{d}")).collect();
    parts.join("x")
}

/// Cost report of `net` for an input batch `[N, 3, H, W]`.
pub fn summarize<T: Scalar>(net: &Network<T>, input: Shape4) -> Result<CostReport> {
    Ok(CostReport {
        input_shape: input,
        rows: net.cost(input)?,
        mcim_rf: net.arch.mcim.as_ref().map(|m| mcim_receptive_field(&m.spec)),
    })
}
