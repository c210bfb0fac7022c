use alloc::format;
use alloc::vec;
use alloc::vec::Vec;


use crate::blocks::{Builder, ConvUnit, DspSpec, InvertedResidual, InvertedResidualSpec, Lrm, Mcim, McimSpec, Post, Ratio};
use crate::cost::{CostRow, ParamCount, Shape4};
use num_traits::Float;

use crate::error::{bail, Result};
use crate::ops::conv::ConvSpec;
use crate::ops::norm::Mode;
use crate::params::{ParamStore, Session, TraceRow};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Output widths of stages 0–7 at width multiplier 1.
pub const STAGE_WIDTHS: [usize; 8] = [32, 16, 24, 32, 64, 96, 160, 320];
/// Block repeats of stages 0–7.
pub const STAGE_REPEATS: [usize; 8] = [1, 1, 2, 3, 4, 3, 3, 1];

/// Long-skip tap points: the shallow stage's output refines the deep stage's
/// output, and the result feeds the stage after `deep`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LrmCfg {
    pub shallow: usize,
    pub deep: usize,
    /// MLP reduction factor of the attention branch.
    pub reduction: usize,
}

impl Default for LrmCfg {
    fn default() -> Self {
        Self {
            shallow: 3,
            deep: 6,
            reduction: 16,
        }
    }
}

/// Context module settings; the width comes from the last stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct McimCfg {
    /// Dilation sets of the small, medium and large blocks.
    pub dilations: [Vec<usize>; 3],
    pub reduce_ratio: Ratio,
    pub groups: usize,
    pub with_gap: bool,
    /// Image-level branch width at multiplier 1.
    pub global_ch: usize,
}

impl McimCfg {
    pub fn cityscapes() -> Self {
        Self::with_dilations([vec![1, 2, 3, 5], vec![7, 9, 11, 13], vec![17, 19, 21, 23]])
    }

    pub fn camvid() -> Self {
        Self::with_dilations([vec![1, 2, 3, 5], vec![5, 7, 9, 11], vec![11, 13, 15, 17]])
    }

    pub fn helen() -> Self {
        Self::with_dilations([vec![1, 2, 3, 5], vec![3, 5, 7, 11], vec![7, 9, 11, 13]])
    }

    fn with_dilations(dilations: [Vec<usize>; 3]) -> Self {
        Self {
            dilations,
            reduce_ratio: Ratio::new(1, 5).expect("nonzero"),
            groups: 4,
            with_gap: true,
            global_ch: 80,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkCfg {
    pub num_classes: usize,
    pub output_stride: usize,
    /// Dilations of stages 4–7.
    pub hdrs: [usize; 4],
    pub widths: [usize; 8],
    pub repeats: [usize; 8],
    pub width_multiplier: Ratio,
    pub max_repeats: Option<usize>,
    pub lrm: Option<LrmCfg>,
    pub mcim: Option<McimCfg>,
}

impl Default for NetworkCfg {
    /// The full-width network at output stride 8 with 19 classes.
    fn default() -> Self {
        Self {
            num_classes: 19,
            output_stride: 8,
            hdrs: [2, 3, 5, 7],
            widths: STAGE_WIDTHS,
            repeats: STAGE_REPEATS,
            width_multiplier: Ratio::ONE,
            max_repeats: None,
            lrm: Some(LrmCfg::default()),
            mcim: Some(McimCfg::cityscapes()),
        }
    }
}

/// Resolved geometry of one backbone stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StagePlan {
    pub index: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub repeats: usize,
    pub stride: usize,
    pub dilation: usize,
    pub expansion: usize,
}

/// MobileNet channel rounding: nearest multiple of 8, at least 8, never more
/// than 10% below the exact value.
fn make_divisible(value: f64) -> usize {
    let rounded = (Float::floor((value + 4.0) / 8.0) as usize * 8).max(8);
    if (rounded as f64) < 0.9 * value {
        rounded + 8
    } else {
        rounded
    }
}

impl NetworkCfg {
    /// Quarter width, one block per stage, output stride 4, small-object
    /// dilation sets; sized for CPU training on small images.
    pub fn mini(num_classes: usize) -> Self {
        Self {
            num_classes,
            output_stride: 4,
            width_multiplier: Ratio::new(1, 4).expect("nonzero"),
            max_repeats: Some(1),
            mcim: Some(McimCfg::helen()),
            ..Self::default()
        }
    }

    /// The same network without the refinement and context modules.
    pub fn ablated(&self) -> Self {
        Self {
            lrm: None,
            mcim: None,
            ..self.clone()
        }
    }

    pub fn stage_width(&self, stage: usize) -> usize {
        make_divisible(self.widths[stage] as f64 * self.width_multiplier.to_f64())
    }

    pub fn stage_repeats(&self, stage: usize) -> usize {
        let r = self.repeats[stage];
        self.max_repeats.map_or(r, |m| r.min(m))
    }

    fn strides(&self) -> Result<[usize; 8]> {
        Ok(match self.output_stride {
            4 => [2, 1, 2, 1, 1, 1, 1, 1],
            8 => [2, 1, 2, 2, 1, 1, 1, 1],
            16 => [2, 1, 2, 2, 2, 1, 1, 1],
            32 => [2, 1, 2, 2, 2, 1, 2, 1],
            os => bail!(Config, "output stride must be 4, 8, 16 or 32, got {os}"),
        })
    }

    /// Cumulative downsampling after each stage.
    pub fn stage_scales(&self) -> Result<[usize; 8]> {
        let strides = self.strides()?;
        let mut scale = 1;
        Ok(strides.map(|s| {
            scale *= s;
            scale
        }))
    }

    /// Stages 1–7; stage 0 is the stem convolution.
    pub fn stage_plans(&self) -> Result<Vec<StagePlan>> {
        let strides = self.strides()?;
        Ok((1..8)
            .map(|i| StagePlan {
                index: i,
                in_ch: self.stage_width(i - 1),
                out_ch: self.stage_width(i),
                repeats: self.stage_repeats(i),
                stride: strides[i],
                dilation: match i {
                    4..=7 => self.hdrs[i - 4],
                    3 if self.output_stride == 4 => self.hdrs[0],
                    _ => 1,
                },
                expansion: if i == 1 { 1 } else { 6 },
            })
            .collect())
    }

    pub fn global_channels(&self, base: usize) -> usize {
        (Float::round(base as f64 * self.width_multiplier.to_f64()) as usize).max(1)
    }

    pub fn mcim_spec(&self) -> Option<McimSpec> {
        let m = self.mcim.as_ref()?;
        let c = self.stage_width(7);
        let dsp = |d: &[usize]| DspSpec::new(c, m.reduce_ratio, d, m.groups, m.with_gap);
        Some(McimSpec {
            dsp_s: dsp(&m.dilations[0]),
            dsp_m: dsp(&m.dilations[1]),
            dsp_l: dsp(&m.dilations[2]),
            global_ch: self.global_channels(m.global_ch),
        })
    }

    /// Channels entering the classifier.
    pub fn head_channels(&self) -> usize {
        self.mcim_spec()
            .map_or(self.stage_width(7), |m| m.out_channels())
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=255).contains(&self.num_classes) {
            bail!(Config, "class count must be in 2..=255, got {}", self.num_classes);
        }
        if self.hdrs.contains(&0) || self.widths.contains(&0) || self.repeats.contains(&0) {
            bail!(Config, "dilations, widths and repeats must be positive");
        }
        if self.max_repeats == Some(0) {
            bail!(Config, "repeat cap must be positive");
        }
        let scales = self.stage_scales()?;
        if let Some(l) = self.lrm {
            if l.shallow >= l.deep || l.deep > 7 {
                bail!(Config, "LRM taps must satisfy shallow < deep <= 7, got {} -> {}", l.shallow, l.deep);
            }
            if scales[l.shallow] != scales[l.deep] {
                bail!(
                    Config,
                    "LRM taps stage{} (1/{}) and stage{} (1/{}) differ in resolution at output stride {}",
                    l.shallow,
                    scales[l.shallow],
                    l.deep,
                    scales[l.deep],
                    self.output_stride
                );
            }
            if l.reduction == 0 {
                bail!(Config, "LRM reduction must be positive");
            }
        }
        if let Some(spec) = self.mcim_spec() {
            spec.validate()
                .map_err(|e| crate::Error::Config(format!("context module: {e}")))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub plan: StagePlan,
    pub blocks: Vec<InvertedResidual>,
}

/// Parameter-free description of a built network.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub stem: ConvUnit,
    pub stages: Vec<Stage>,
    pub lrm: Option<(LrmCfg, Lrm)>,
    pub mcim: Option<Mcim>,
    pub head: ConvUnit,
    pub output_stride: usize,
    pub num_classes: usize,
}

impl Architecture {
    pub fn build<T: Scalar>(cfg: &NetworkCfg, b: &mut Builder<'_, T>) -> Result<Self> {
        cfg.validate()?;
        let stem = b.conv(
            "stage0.conv",
            ConvSpec::new(3, cfg.stage_width(0), 3).stride(2).padding(1),
            Post::BnAct,
        )?;
        let mut stages = Vec::with_capacity(7);
        for plan in cfg.stage_plans()? {
            let blocks = (0..plan.repeats)
                .map(|j| {
                    let spec = InvertedResidualSpec {
                        in_ch: if j == 0 { plan.in_ch } else { plan.out_ch },
                        out_ch: plan.out_ch,
                        stride: if j == 0 { plan.stride } else { 1 },
                        expansion: plan.expansion,
                        dilation: plan.dilation,
                    };
                    InvertedResidual::build(b, &format!("stage{}.block{j}", plan.index), spec)
                })
                .collect::<Result<_>>()?;
            stages.push(Stage { plan, blocks });
        }
        let lrm = cfg
            .lrm
            .map(|l| {
                let lrm = Lrm::build(b, "lrm", cfg.stage_width(l.shallow), cfg.stage_width(l.deep), l.reduction)?;
                Ok::<_, crate::Error>((l, lrm))
            })
            .transpose()?;
        let mcim = cfg.mcim_spec().map(|spec| Mcim::build(b, "mcim", spec)).transpose()?;
        let head = b.classifier("head.conv", ConvSpec::pointwise(cfg.head_channels(), cfg.num_classes))?;
        Ok(Self {
            stem,
            stages,
            lrm,
            mcim,
            head,
            output_stride: cfg.output_stride,
            num_classes: cfg.num_classes,
        })
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != 3 {
            bail!(Shape, "network input must be [N, 3, H, W], got {shape:?}");
        }
        let os = self.output_stride;
        if shape[2] % os != 0 || shape[3] % os != 0 {
            bail!(
                Shape,
                "input {}x{} is not divisible by the output stride {os}",
                shape[2],
                shape[3]
            );
        }
        Ok(())
    }

    /// Logits `[N, K, H, W]` for an image batch `[N, 3, H, W]`.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, image: Var) -> Result<Var> {
        let shape = s.graph.shape(image).to_vec();
        self.check_input(&shape)?;
        let mut x = self.stem.forward(s, image)?;
        let mut feats = vec![x];
        for stage in &self.stages {
            for block in &stage.blocks {
                x = block.forward(s, x)?;
            }
            feats.push(x);
            if let Some((l, lrm)) = &self.lrm {
                if l.deep == stage.plan.index {
                    x = lrm.forward(s, feats[l.shallow], x)?;
                }
            }
        }
        if let Some(m) = &self.mcim {
            x = m.forward(s, x)?;
        }
        let logits = self.head.forward(s, x)?;
        let out = s.graph.bilinear_upsample(logits, shape[2], shape[3])?;
        s.record("head.upsample", out);
        Ok(out)
    }

    pub fn param_count(&self) -> ParamCount {
        let backbone: ParamCount = self
            .stages
            .iter()
            .flat_map(|s| &s.blocks)
            .map(InvertedResidual::param_count)
            .sum();
        self.stem.param_count()
            + backbone
            + self.lrm.as_ref().map(|(_, l)| l.param_count()).unwrap_or_default()
            + self.mcim.as_ref().map(Mcim::param_count).unwrap_or_default()
            + self.head.param_count()
    }

    /// One row per traced layer, in execution order.
    pub fn cost(&self, input: Shape4) -> Result<Vec<CostRow>> {
        self.check_input(&input)?;
        let mut rows = Vec::new();
        let (row, mut x) = self.stem.cost(input)?;
        rows.push(row);
        let mut feats = vec![x];
        for stage in &self.stages {
            for block in &stage.blocks {
                x = block.cost(x, &mut rows)?;
            }
            feats.push(x);
            if let Some((l, lrm)) = &self.lrm {
                if l.deep == stage.plan.index {
                    x = lrm.cost(feats[l.shallow], x, &mut rows)?;
                }
            }
        }
        if let Some(m) = &self.mcim {
            x = m.cost(x, &mut rows)?;
        }
        let (row, logits) = self.head.cost(x)?;
        rows.push(row);
        let out = [input[0], logits[1], input[2], input[3]];
        rows.push(CostRow::new("head.upsample", out).macs(4 * out.iter().product::<usize>() as u64));
        Ok(rows)
    }
}

/// A built network: configuration, structure and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub cfg: NetworkCfg,
    pub arch: Architecture,
    pub params: ParamStore<T>,
}

/// Builds the network described by `cfg`, drawing initial weights from `seed`.
pub fn build_cifrenet<T: Scalar>(cfg: &NetworkCfg, seed: u64) -> Result<Network<T>> {
    let mut params = ParamStore::new();
    let arch = Architecture::build(cfg, &mut Builder::new(&mut params, seed))?;
    Ok(Network {
        cfg: cfg.clone(),
        arch,
        params,
    })
}

impl<T: Scalar> Network<T> {
    /// Inference-mode logits (running batch-norm statistics).
    pub fn infer(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut s = Session::infer(&self.params);
        let x = s.input(image.clone());
        let y = self.arch.forward(&mut s, x)?;
        Ok(s.graph.value(y).clone())
    }

    /// Forward pass in `mode` with a fresh tape, parameters tracked in train mode.
    pub fn session(&mut self, mode: Mode) -> (&Architecture, Session<'_, T>) {
        (&self.arch, Session::new(&mut self.params, mode))
    }

    /// Names and shapes of every recorded layer output for one inference pass.
    pub fn trace(&self, image: &Tensor<T>) -> Result<Vec<TraceRow>> {
        let mut s = Session::infer(&self.params);
        s.enable_trace();
        let x = s.input(image.clone());
        self.arch.forward(&mut s, x)?;
        Ok(s.trace().to_vec())
    }

    pub fn cost(&self, input: Shape4) -> Result<Vec<CostRow>> {
        self.arch.cost(input)
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mini_widths() {
        let cfg = NetworkCfg::mini(4);
        let w: Vec<usize> = (0..8).map(|i| cfg.stage_width(i)).collect();
        assert_eq!(w, [8, 8, 8, 8, 16, 24, 40, 80]);
        assert_eq!(cfg.mcim_spec().unwrap().out_channels(), 100);
    }

    #[test]
    fn default_widths_unchanged() {
        let cfg = NetworkCfg::default();
        let w: Vec<usize> = (0..8).map(|i| cfg.stage_width(i)).collect();
        assert_eq!(w, STAGE_WIDTHS);
        assert_eq!(cfg.head_channels(), 400);
    }

    #[test]
    fn scales_per_output_stride() {
        for os in [4, 8, 16, 32] {
            let cfg = NetworkCfg {
                output_stride: os,
                ..NetworkCfg::default()
            };
            assert_eq!(cfg.stage_scales().unwrap()[7], os);
        }
    }

    #[test]
    fn mismatched_taps_rejected() {
        let cfg = NetworkCfg {
            output_stride: 16,
            ..NetworkCfg::default()
        };
        assert!(matches!(cfg.validate(), Err(crate::Error::Config(_))));
        let cfg = NetworkCfg {
            output_stride: 12,
            ..NetworkCfg::default()
        };
        assert!(matches!(cfg.validate(), Err(crate::Error::Config(_))));
    }
}
