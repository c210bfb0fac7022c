use alloc::format;
use alloc::vec::Vec;

use crate::blocks::{Builder, ConvUnit, Post};
use crate::cost::{CostRow, ParamCount, Shape4};
use crate::error::{bail, Result};
use crate::ops::conv::ConvSpec;
use crate::params::Session;
use crate::scalar::Scalar;
use crate::tape::Var;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InvertedResidualSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
    pub expansion: usize,
    pub dilation: usize,
}

impl InvertedResidualSpec {
    pub fn has_shortcut(&self) -> bool {
        self.stride == 1 && self.in_ch == self.out_ch
    }

    pub fn hidden(&self) -> usize {
        self.in_ch * self.expansion
    }
}

/// Expand (1×1) → depthwise 3×3 → linear projection (1×1), with an identity
/// shortcut when shapes allow.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedResidual {
    pub name: alloc::string::String,
    pub spec: InvertedResidualSpec,
    pub expand: Option<ConvUnit>,
    pub depthwise: ConvUnit,
    pub project: ConvUnit,
}

impl InvertedResidual {
    pub fn build<T: Scalar>(b: &mut Builder<'_, T>, name: &str, spec: InvertedResidualSpec) -> Result<Self> {
        if spec.in_ch == 0 || spec.out_ch == 0 || spec.expansion == 0 || spec.dilation == 0 {
            bail!(Spec, "inverted residual `{name}` has a zero-sized field: {spec:?}");
        }
        if !(1..=2).contains(&spec.stride) {
            bail!(Spec, "inverted residual stride must be 1 or 2, got {}", spec.stride);
        }
        let hidden = spec.hidden();
        let expand = if spec.expansion == 1 {
            None
        } else {
            Some(b.conv(
                &format!("{name}.expand"),
                ConvSpec::pointwise(spec.in_ch, hidden),
                Post::BnAct,
            )?)
        };
        let depthwise = b.conv(
            &format!("{name}.dwconv"),
            ConvSpec::depthwise(hidden, 3, spec.dilation).stride(spec.stride),
            Post::BnAct,
        )?;
        let project = b.conv(
            &format!("{name}.project"),
            ConvSpec::pointwise(hidden, spec.out_ch),
            Post::Bn,
        )?;
        Ok(Self {
            name: name.into(),
            spec,
            expand,
            depthwise,
            project,
        })
    }

    /// Returns `(branch, output)`; they are the same variable without a
    /// shortcut.
    pub fn forward_parts<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<(Var, Var)> {
        let c = s.graph.shape(x).get(1).copied().unwrap_or(0);
        if c != self.spec.in_ch {
            bail!(Shape, "`{}` expects {} channels, got {c}", self.name, self.spec.in_ch);
        }
        let mut h = x;
        if let Some(e) = &self.expand {
            h = e.forward(s, h)?;
        }
        h = self.depthwise.forward(s, h)?;
        let branch = self.project.forward(s, h)?;
        if !self.spec.has_shortcut() {
            return Ok((branch, branch));
        }
        let out = s.graph.add(x, branch)?;
        s.record(&format!("{}.add", self.name), out);
        Ok((branch, out))
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        Ok(self.forward_parts(s, x)?.1)
    }

    pub fn units(&self) -> impl Iterator<Item = &ConvUnit> {
        self.expand.iter().chain([&self.depthwise, &self.project])
    }

    pub fn param_count(&self) -> ParamCount {
        self.units().map(ConvUnit::param_count).sum()
    }

    pub fn cost(&self, input: Shape4, rows: &mut Vec<CostRow>) -> Result<Shape4> {
        let mut shape = input;
        for u in self.units() {
            let (row, out) = u.cost(shape)?;
            rows.push(row);
            shape = out;
        }
        if self.spec.has_shortcut() {
            let elems = shape.iter().product::<usize>() as u64;
            rows.push(CostRow::new(&format!("{}.add", self.name), shape).macs(elems));
        }
        Ok(shape)
    }
}
