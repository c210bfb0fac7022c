use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::blocks::{Builder, ConvUnit, LinearUnit, Post};
use crate::cost::{CostRow, ParamCount, Shape4};
use crate::error::{bail, Result};
use crate::ops::conv::ConvSpec;
use crate::params::{ParamId, Session};
use crate::scalar::Scalar;
use crate::tape::Var;

/// Long-skip refinement: shallow features are lifted to the deep width by a
/// depthwise-separable pair, gated per channel by a softmax over an MLP of
/// the pooled deep features, and added onto the deep features.
#[derive(Debug, Clone, PartialEq)]
pub struct Lrm {
    pub name: String,
    pub shallow_ch: usize,
    pub deep_ch: usize,
    pub dwconv: ConvUnit,
    pub pwconv: ConvUnit,
    pub fc1: LinearUnit,
    pub fc_act: ParamId,
    pub fc2: LinearUnit,
}

/// Intermediate values of one LRM pass.
#[derive(Debug, Clone, Copy)]
pub struct LrmOutputs {
    /// Shallow features lifted to the deep width.
    pub refined: Var,
    /// Softmax channel weights, `[N, C, 1, 1]`.
    pub attention: Var,
    pub out: Var,
}

impl Lrm {
    /// MLP hidden width is `max(1, deep_ch / reduction)`.
    pub fn build<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        shallow_ch: usize,
        deep_ch: usize,
        reduction: usize,
    ) -> Result<Self> {
        if reduction == 0 {
            bail!(Spec, "LRM reduction must be positive");
        }
        let hidden = (deep_ch / reduction).max(1);
        Ok(Self {
            name: name.into(),
            shallow_ch,
            deep_ch,
            dwconv: b.conv(
                &format!("{name}.dwconv"),
                ConvSpec::depthwise(shallow_ch, 3, 1),
                Post::BnAct,
            )?,
            pwconv: b.conv(
                &format!("{name}.pwconv"),
                ConvSpec::pointwise(shallow_ch, deep_ch),
                Post::BnAct,
            )?,
            fc1: b.linear(&format!("{name}.fc1"), deep_ch, hidden)?,
            fc_act: b.prelu(&format!("{name}.fc_act"), hidden)?,
            fc2: b.linear(&format!("{name}.fc2"), hidden, deep_ch)?,
        })
    }

    pub fn forward_detailed<T: Scalar>(&self, s: &mut Session<'_, T>, fs: Var, fa: Var) -> Result<LrmOutputs> {
        let (ss, sa) = (s.graph.shape(fs), s.graph.shape(fa));
        if ss.len() != 4 || sa.len() != 4 || ss[0] != sa[0] || ss[2..] != sa[2..] {
            bail!(Shape, "LRM inputs must share N, H, W: shallow {ss:?}, deep {sa:?}");
        }
        if sa[1] != self.deep_ch {
            bail!(Shape, "LRM deep input must have {} channels, got {}", self.deep_ch, sa[1]);
        }
        let n = sa[0];
        let refined = self.dwconv.forward(s, fs)?;
        let refined = self.pwconv.forward(s, refined)?;

        let v = s.graph.global_avg_pool(fa)?;
        s.record(&format!("{}.gap", self.name), v);
        let v = s.graph.reshape(v, &[n, self.deep_ch])?;
        let v = self.fc1.forward(s, v)?;
        let alpha = s.param(self.fc_act);
        let v = s.graph.prelu(v, alpha)?;
        s.record(&format!("{}.fc_act", self.name), v);
        let v = self.fc2.forward(s, v)?;
        let v = s.graph.reshape(v, &[n, self.deep_ch, 1, 1])?;
        let attention = s.graph.softmax_channels(v)?;
        s.record(&format!("{}.softmax", self.name), attention);

        let gated = s.graph.mul(refined, attention)?;
        s.record(&format!("{}.mul", self.name), gated);
        let out = s.graph.add(gated, fa)?;
        s.record(&format!("{}.add", self.name), out);
        Ok(LrmOutputs {
            refined,
            attention,
            out,
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, fs: Var, fa: Var) -> Result<Var> {
        Ok(self.forward_detailed(s, fs, fa)?.out)
    }

    pub fn param_count(&self) -> ParamCount {
        let hidden = self.fc1.out_features as u64;
        self.dwconv.param_count()
            + self.pwconv.param_count()
            + self.fc1.param_count()
            + ParamCount {
                norm: hidden,
                ..ParamCount::default()
            }
            + self.fc2.param_count()
    }

    pub fn cost(&self, shallow: Shape4, deep: Shape4, rows: &mut Vec<CostRow>) -> Result<Shape4> {
        if shallow[0] != deep[0] || shallow[2..] != deep[2..] {
            bail!(Shape, "LRM inputs must share N, H, W: shallow {shallow:?}, deep {deep:?}");
        }
        let (r1, mid) = self.dwconv.cost(shallow)?;
        let (r2, refined) = self.pwconv.cost(mid)?;
        rows.extend([r1, r2]);
        let [n, c, h, w] = deep;
        let plane = (n * c * h * w) as u64;
        let hidden = self.fc1.out_features;
        rows.push(CostRow::new(&format!("{}.gap", self.name), [n, c, 1, 1]).macs(plane));
        rows.push(self.fc1.cost(n));
        rows.push(
            CostRow::new(&format!("{}.fc_act", self.name), [n, hidden, 1, 1])
                .shape(vec![n, hidden])
                .params(ParamCount {
                    norm: hidden as u64,
                    ..ParamCount::default()
                })
                .macs((n * hidden) as u64),
        );
        rows.push(self.fc2.cost(n));
        rows.push(CostRow::new(&format!("{}.softmax", self.name), [n, c, 1, 1]).macs((n * c) as u64));
        rows.push(CostRow::new(&format!("{}.mul", self.name), refined).macs(plane));
        rows.push(CostRow::new(&format!("{}.add", self.name), deep).macs(plane));
        Ok(deep)
    }
}
