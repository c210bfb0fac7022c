//! Network building blocks and the assembled segmentation network.
//!
//! Blocks hold only geometry and [`ParamId`]s into a [`ParamStore`]; their
//! forward passes run inside a [`Session`], and the same structures feed the
//! analytic cost engine in [`crate::cost`].

mod dsp;
mod inverted;
mod lrm;
mod mcim;
mod network;

use alloc::format;
use alloc::string::String;
use core::fmt;

use rand_chacha::ChaCha8Rng;

use crate::cost::{CostRow, ParamCount, Shape4};
use crate::error::{bail, Result};
use crate::ops::conv::ConvSpec;
use crate::params::{kaiming_uniform, BnIds, ParamId, ParamKind, ParamStore, Session};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

pub use dsp::{Dsp, DspOutputs, DspSpec};
pub use inverted::{InvertedResidual, InvertedResidualSpec};
pub use lrm::{Lrm, LrmOutputs};
pub use mcim::{Mcim, McimOutputs, McimSpec};
pub use network::{build_cifrenet, Architecture, LrmCfg, McimCfg, Network, NetworkCfg, Stage, StagePlan};

/// Exact positive rational, used for channel ratios and width multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ratio {
    num: usize,
    den: usize,
}

impl Ratio {
    pub const ONE: Ratio = Ratio { num: 1, den: 1 };

    pub fn new(num: usize, den: usize) -> Result<Self> {
        if num == 0 || den == 0 {
            bail!(Spec, "ratio {num}/{den} must be positive");
        }
        let g = gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    pub fn num(self) -> usize {
        self.num
    }

    pub fn den(self) -> usize {
        self.den
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `value · self` when that is a whole number.
    pub fn apply_exact(self, value: usize) -> Option<usize> {
        let p = value * self.num;
        (p % self.den == 0).then_some(p / self.den)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl core::str::FromStr for Ratio {
    type Err = crate::Error;

    /// Accepts `a/b` or a plain integer.
    fn from_str(s: &str) -> Result<Self> {
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| crate::Error::Spec(format!("cannot parse ratio `{s}`")))
        };
        match s.split_once('/') {
            Some((a, b)) => Ratio::new(parse(a)?, parse(b)?),
            None => Ratio::new(parse(s)?, 1),
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// What follows a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Post {
    /// Nothing; the convolution carries a bias (classifier head).
    Bias,
    /// Batch norm only (linear bottleneck projections).
    Bn,
    /// Batch norm then PReLU.
    BnAct,
}

/// Convolution with its optional batch norm and PReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvUnit {
    pub name: String,
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub bn: Option<BnIds>,
    pub act: Option<ParamId>,
}

impl ConvUnit {
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = self.bias.map(|id| s.param(id));
        let mut y = s.graph.conv2d(x, w, b, &self.spec)?;
        if let Some(bn) = &self.bn {
            y = s.batch_norm(y, bn)?;
        }
        if let Some(a) = self.act {
            let a = s.param(a);
            y = s.graph.prelu(y, a)?;
        }
        s.record(&self.name, y);
        Ok(y)
    }

    pub fn param_count(&self) -> ParamCount {
        let c = self.spec.out_channels as u64;
        ParamCount {
            weights: self.spec.weight_count() as u64,
            bias: if self.bias.is_some() { c } else { 0 },
            norm: if self.bn.is_some() { 2 * c } else { 0 } + if self.act.is_some() { c } else { 0 },
        }
    }

    pub fn cost(&self, input: Shape4) -> Result<(CostRow, Shape4)> {
        let [n, c, h, w] = input;
        if c != self.spec.in_channels {
            bail!(
                Shape,
                "`{}` expects {} input channels, got {c}",
                self.name,
                self.spec.in_channels
            );
        }
        let (oh, ow) = self.spec.output_hw(h, w)?;
        let out = [n, self.spec.out_channels, oh, ow];
        let elems = out.iter().product::<usize>() as u64;
        let passes = u64::from(self.bn.is_some()) + u64::from(self.act.is_some());
        let macs = crate::cost::conv_macs(&self.spec, input)? + passes * elems;
        let row = CostRow::new(&self.name, out)
            .params(self.param_count())
            .macs(macs)
            .rf(crate::cost::layer_rf(self.spec.kernel, self.spec.dilation));
        Ok((row, out))
    }
}

/// Affine map `[N, Cin] → [N, Cout]` with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearUnit {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearUnit {
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        let y = s.graph.linear(x, w, Some(b))?;
        s.record(&self.name, y);
        Ok(y)
    }

    pub fn param_count(&self) -> ParamCount {
        ParamCount {
            weights: (self.in_features * self.out_features) as u64,
            bias: self.out_features as u64,
            norm: 0,
        }
    }

    pub fn cost(&self, batch: usize) -> CostRow {
        CostRow::new(&self.name, [batch, self.out_features, 1, 1])
            .shape(alloc::vec![batch, self.out_features])
            .params(self.param_count())
            .macs((batch * self.in_features * self.out_features) as u64)
    }
}

/// Registers parameters in a store with seeded initialization.
pub struct Builder<'a, T> {
    pub store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<'a, T: Scalar> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64) -> Self {
        use rand::SeedableRng;
        Self {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn conv(&mut self, name: &str, spec: ConvSpec, post: Post) -> Result<ConvUnit> {
        spec.validate()?;
        let spec = spec.bias(post == Post::Bias);
        let fan_in = spec.in_channels / spec.groups * spec.kernel * spec.kernel;
        let w = kaiming_uniform(&mut self.rng, &spec.weight_shape(), fan_in)?;
        let weight = self.store.push(format!("{name}.weight"), ParamKind::ConvWeight, w)?;
        let c = spec.out_channels;
        let bias = match post {
            Post::Bias => Some(self.store.push(format!("{name}.bias"), ParamKind::Bias, Tensor::zeros(&[c])?)?),
            _ => None,
        };
        let bn = match post {
            Post::Bias => None,
            _ => Some(BnIds::register(self.store, &format!("{name}.bn"), c)?),
        };
        let act = match post {
            Post::BnAct => Some(self.prelu(&format!("{name}.act"), c)?),
            _ => None,
        };
        Ok(ConvUnit {
            name: name.into(),
            spec,
            weight,
            bias,
            bn,
            act,
        })
    }

    /// Final classifier: a biased conv with weights uniform at standard
    /// deviation 0.01, so a fresh network predicts nearly uniform classes.
    pub fn classifier(&mut self, name: &str, spec: ConvSpec) -> Result<ConvUnit> {
        const STD: f64 = 0.01;
        let unit = self.conv(name, spec, Post::Bias)?;
        let fan_in = (spec.in_channels / spec.groups * spec.kernel * spec.kernel) as f64;
        // rescale the ±1/√fan_in draw to ±√3·STD
        let scale = T::of(STD * num_traits::Float::sqrt(3.0 * fan_in));
        for v in self.store.get_mut(unit.weight).value.data_mut() {
            *v = *v * scale;
        }
        Ok(unit)
    }

    pub fn linear(&mut self, name: &str, in_features: usize, out_features: usize) -> Result<LinearUnit> {
        let w = kaiming_uniform(&mut self.rng, &[out_features, in_features], in_features)?;
        Ok(LinearUnit {
            name: name.into(),
            in_features,
            out_features,
            weight: self.store.push(format!("{name}.weight"), ParamKind::LinearWeight, w)?,
            bias: self
                .store
                .push(format!("{name}.bias"), ParamKind::Bias, Tensor::zeros(&[out_features])?)?,
        })
    }

    pub fn prelu(&mut self, name: &str, channels: usize) -> Result<ParamId> {
        let alpha = crate::ops::PReluState::<T>::new(channels).to_tensor();
        self.store.push(format!("{name}.alpha"), ParamKind::PreluAlpha, alpha)
    }
}
