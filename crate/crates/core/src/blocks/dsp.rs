use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::blocks::{Builder, ConvUnit, Post, Ratio};
use crate::cost::{CostRow, ParamCount, Shape4};
use crate::error::{bail, Error, Result};
use crate::ops::conv::ConvSpec;
use crate::params::Session;
use crate::scalar::Scalar;
use crate::tape::Var;

/// Geometry of one dense semantic pyramid block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DspSpec {
    /// Input and output width.
    pub channels: usize,
    pub n_paths: usize,
    pub reduce_ratio: Ratio,
    /// One dilation per path, strictly increasing.
    pub dilations: Vec<usize>,
    /// Groups of the reducing 1×1 convolution and of the channel shuffle.
    pub groups: usize,
    pub with_gap: bool,
}

impl DspSpec {
    pub fn new(channels: usize, reduce_ratio: Ratio, dilations: &[usize], groups: usize, with_gap: bool) -> Self {
        Self {
            channels,
            n_paths: dilations.len(),
            reduce_ratio,
            dilations: dilations.to_vec(),
            groups,
            with_gap,
        }
    }

    /// Width of each path, `channels · r`.
    pub fn reduced(&self) -> Result<usize> {
        match self.reduce_ratio.apply_exact(self.channels) {
            Some(c) if c > 0 => Ok(c),
            _ => bail!(
                Spec,
                "{} channels times ratio {} is not a positive integer",
                self.channels,
                self.reduce_ratio
            ),
        }
    }

    /// Channels of the concatenated paths before the shuffle.
    pub fn concat_width(&self) -> Result<usize> {
        Ok(self.reduced()? * (self.n_paths + usize::from(self.with_gap)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dilations.is_empty() || self.dilations.len() != self.n_paths {
            bail!(
                Spec,
                "DSP needs one dilation per path: {} paths, dilations {:?}",
                self.n_paths,
                self.dilations
            );
        }
        if self.dilations[0] == 0 || self.dilations.windows(2).any(|w| w[0] >= w[1]) {
            bail!(Spec, "DSP dilations must be positive and strictly increasing: {:?}", self.dilations);
        }
        let reduced = self.reduced()?;
        if self.groups == 0 || self.channels % self.groups != 0 || reduced % self.groups != 0 {
            bail!(
                Spec,
                "DSP group count {} must divide both {} and {reduced}",
                self.groups,
                self.channels
            );
        }
        let width = self.concat_width()?;
        if width != self.channels {
            return Err(Error::Residual {
                input: self.channels,
                output: width,
            });
        }
        Ok(())
    }

    pub fn max_dilation(&self) -> usize {
        self.dilations.iter().copied().max().unwrap_or(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DspBranch {
    pub dwconv: ConvUnit,
    pub pwconv: ConvUnit,
}

/// Grouped channel reduction, parallel dilated depthwise-separable paths
/// (plus an optional pooled path), concatenation, channel shuffle and a
/// residual connection.
#[derive(Debug, Clone, PartialEq)]
pub struct Dsp {
    pub name: String,
    pub spec: DspSpec,
    pub reduce: ConvUnit,
    pub branches: Vec<DspBranch>,
}

/// Intermediate values of one DSP pass.
#[derive(Debug, Clone)]
pub struct DspOutputs {
    pub reduced: Var,
    /// Path outputs in concatenation order (pooled path last).
    pub paths: Vec<Var>,
    /// Shuffled concatenation, the residual branch.
    pub branch: Var,
    pub out: Var,
}

impl Dsp {
    pub fn build<T: Scalar>(b: &mut Builder<'_, T>, name: &str, spec: DspSpec) -> Result<Self> {
        spec.validate()?;
        let cr = spec.reduced()?;
        let reduce = b.conv(
            &format!("{name}.reduce"),
            ConvSpec::pointwise(spec.channels, cr).groups(spec.groups),
            Post::BnAct,
        )?;
        let branches = spec
            .dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                Ok(DspBranch {
                    dwconv: b.conv(
                        &format!("{name}.branch{i}.dwconv"),
                        ConvSpec::depthwise(cr, 3, d),
                        Post::BnAct,
                    )?,
                    pwconv: b.conv(
                        &format!("{name}.branch{i}.pwconv"),
                        ConvSpec::pointwise(cr, cr),
                        Post::BnAct,
                    )?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            name: name.into(),
            spec,
            reduce,
            branches,
        })
    }

    pub fn forward_detailed<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<DspOutputs> {
        let shape = s.graph.shape(x).to_vec();
        if shape.len() != 4 {
            bail!(Shape, "DSP input must be rank 4, got {shape:?}");
        }
        if shape[1] != self.spec.channels {
            return Err(Error::Residual {
                input: shape[1],
                output: self.spec.channels,
            });
        }
        let (h, w) = (shape[2], shape[3]);
        let reduced = self.reduce.forward(s, x)?;
        let mut paths = Vec::with_capacity(self.branches.len() + 1);
        for br in &self.branches {
            let y = br.dwconv.forward(s, reduced)?;
            paths.push(br.pwconv.forward(s, y)?);
        }
        if self.spec.with_gap {
            let g = s.graph.global_avg_pool(reduced)?;
            let g = s.graph.bilinear_upsample(g, h, w)?;
            s.record(&format!("{}.pool", self.name), g);
            paths.push(g);
        }
        let cat = s.graph.concat_channels(&paths)?;
        let branch = s.graph.channel_shuffle(cat, self.spec.groups)?;
        s.record(&format!("{}.shuffle", self.name), branch);
        let out = s.graph.add(x, branch)?;
        s.record(&format!("{}.add", self.name), out);
        Ok(DspOutputs {
            reduced,
            paths,
            branch,
            out,
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        Ok(self.forward_detailed(s, x)?.out)
    }

    pub fn units(&self) -> impl Iterator<Item = &ConvUnit> {
        core::iter::once(&self.reduce).chain(self.branches.iter().flat_map(|b| [&b.dwconv, &b.pwconv]))
    }

    pub fn param_count(&self) -> ParamCount {
        self.units().map(ConvUnit::param_count).sum()
    }

    pub fn cost(&self, input: Shape4, rows: &mut Vec<CostRow>) -> Result<Shape4> {
        if input[1] != self.spec.channels {
            return Err(Error::Residual {
                input: input[1],
                output: self.spec.channels,
            });
        }
        let [n, c, h, w] = input;
        let (row, reduced) = self.reduce.cost(input)?;
        rows.push(row);
        for br in &self.branches {
            let (r1, mid) = br.dwconv.cost(reduced)?;
            let (r2, _) = br.pwconv.cost(mid)?;
            rows.extend([r1, r2]);
        }
        if self.spec.with_gap {
            let cr = reduced[1];
            // pooling reads every element once, resampling costs 4 per output
            let macs = (reduced.iter().product::<usize>() + 4 * n * cr * h * w) as u64;
            rows.push(CostRow::new(&format!("{}.pool", self.name), [n, cr, h, w]).macs(macs));
        }
        rows.push(CostRow::new(&format!("{}.shuffle", self.name), input));
        rows.push(CostRow::new(&format!("{}.add", self.name), input).macs((n * c * h * w) as u64));
        Ok(input)
    }
}
