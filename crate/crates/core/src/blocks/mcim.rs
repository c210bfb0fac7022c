use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::blocks::{Builder, ConvUnit, Dsp, DspSpec, Post};
use crate::cost::{CostRow, ParamCount, Shape4};
use crate::error::{bail, Result};
use crate::ops::conv::ConvSpec;
use crate::params::Session;
use crate::scalar::Scalar;
use crate::tape::Var;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct McimSpec {
    pub dsp_s: DspSpec,
    pub dsp_m: DspSpec,
    pub dsp_l: DspSpec,
    /// Width of the image-level branch.
    pub global_ch: usize,
}

impl McimSpec {
    pub fn channels(&self) -> usize {
        self.dsp_s.channels
    }

    pub fn out_channels(&self) -> usize {
        self.channels() + self.global_ch
    }

    pub fn dsps(&self) -> [&DspSpec; 3] {
        [&self.dsp_s, &self.dsp_m, &self.dsp_l]
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        if self.dsps().iter().any(|d| d.channels != c) {
            bail!(
                Spec,
                "MCIM blocks must share one width, got {}, {}, {}",
                self.dsp_s.channels,
                self.dsp_m.channels,
                self.dsp_l.channels
            );
        }
        if self.global_ch == 0 {
            bail!(Spec, "MCIM global branch width must be positive");
        }
        self.dsps().into_iter().try_for_each(DspSpec::validate)
    }
}

/// Cascade of three DSP blocks whose outputs are summed, concatenated with a
/// pooled image-level branch.
#[derive(Debug, Clone, PartialEq)]
pub struct Mcim {
    pub name: String,
    pub spec: McimSpec,
    pub dsp: [Dsp; 3],
    /// 1×1 convolution + BN + PReLU applied to the pooled input.
    pub global: ConvUnit,
}

#[derive(Debug, Clone)]
pub struct McimOutputs {
    /// Outputs of the small, medium and large dilation blocks.
    pub stages: [Var; 3],
    pub sum: Var,
    /// Upsampled image-level features, constant over each plane.
    pub global: Var,
    pub out: Var,
}

impl Mcim {
    pub fn build<T: Scalar>(b: &mut Builder<'_, T>, name: &str, spec: McimSpec) -> Result<Self> {
        spec.validate()?;
        let dsp = [
            Dsp::build(b, &format!("{name}.dsp_s"), spec.dsp_s.clone())?,
            Dsp::build(b, &format!("{name}.dsp_m"), spec.dsp_m.clone())?,
            Dsp::build(b, &format!("{name}.dsp_l"), spec.dsp_l.clone())?,
        ];
        let global = b.conv(
            &format!("{name}.global"),
            ConvSpec::pointwise(spec.channels(), spec.global_ch),
            Post::BnAct,
        )?;
        Ok(Self {
            name: name.into(),
            spec,
            dsp,
            global,
        })
    }

    pub fn forward_detailed<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<McimOutputs> {
        let shape = s.graph.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.spec.channels() {
            bail!(
                Shape,
                "MCIM expects [N, {}, H, W], got {shape:?}",
                self.spec.channels()
            );
        }
        let o1 = self.dsp[0].forward(s, x)?;
        let o2 = self.dsp[1].forward(s, o1)?;
        let o3 = self.dsp[2].forward(s, o2)?;
        let sum = s.graph.add(o1, o2)?;
        let sum = s.graph.add(sum, o3)?;
        s.record(&format!("{}.sum", self.name), sum);

        let g = s.graph.global_avg_pool(x)?;
        s.record(&format!("{}.gap", self.name), g);
        let g = self.global.forward(s, g)?;
        let global = s.graph.bilinear_upsample(g, shape[2], shape[3])?;
        s.record(&format!("{}.upsample", self.name), global);

        let out = s.graph.concat_channels(&[sum, global])?;
        s.record(&format!("{}.concat", self.name), out);
        Ok(McimOutputs {
            stages: [o1, o2, o3],
            sum,
            global,
            out,
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        Ok(self.forward_detailed(s, x)?.out)
    }

    pub fn param_count(&self) -> ParamCount {
        self.dsp.iter().map(Dsp::param_count).sum::<ParamCount>() + self.global.param_count()
    }

    pub fn cost(&self, input: Shape4, rows: &mut Vec<CostRow>) -> Result<Shape4> {
        let [n, c, h, w] = input;
        if c != self.spec.channels() {
            bail!(Shape, "MCIM expects {} channels, got {c}", self.spec.channels());
        }
        let mut shape = input;
        for d in &self.dsp {
            shape = d.cost(shape, rows)?;
        }
        let elems = (n * c * h * w) as u64;
        rows.push(CostRow::new(&format!("{}.sum", self.name), input).macs(2 * elems));
        rows.push(CostRow::new(&format!("{}.gap", self.name), [n, c, 1, 1]).macs(elems));
        let (row, pooled) = self.global.cost([n, c, 1, 1])?;
        rows.push(row);
        let up = [n, pooled[1], h, w];
        rows.push(CostRow::new(&format!("{}.upsample", self.name), up).macs(4 * up.iter().product::<usize>() as u64));
        let out = [n, self.spec.out_channels(), h, w];
        rows.push(CostRow::new(&format!("{}.concat", self.name), out));
        Ok(out)
    }
}
