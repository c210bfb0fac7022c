//! `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Unknown and repeated keys are errors. `preset` (`default` or `mini`)
//! picks the starting network; every other key overrides one field of it,
//! regardless of line order.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use cifrenet_core::blocks::{LrmCfg, McimCfg, NetworkCfg, Ratio};
use cifrenet_core::train::TrainCfg;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub net: NetworkCfg,
    pub train: TrainCfg,
    /// Seed of the weight initialization.
    pub init_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            net: NetworkCfg::default(),
            train: TrainCfg::default(),
            init_seed: 0,
        }
    }
}

impl RunConfig {
    /// The desk-scale preset: the mini network with toy-data training.
    pub fn mini(num_classes: usize) -> Self {
        Self {
            net: NetworkCfg::mini(num_classes),
            ..Self::default()
        }
    }
}

pub const KEYS: &[&str] = &[
    "preset",
    "num_classes",
    "output_stride",
    "hdrs",
    "width_multiplier",
    "max_repeats",
    "lrm",
    "lrm_shallow",
    "lrm_deep",
    "lrm_reduction",
    "mcim",
    "mcim_dilations",
    "mcim_reduce",
    "mcim_groups",
    "mcim_global_ch",
    "init_seed",
    "base_lr",
    "power",
    "momentum",
    "weight_decay",
    "max_iter",
    "batch",
    "seed",
    "crop",
    "scale_min",
    "scale_max",
    "hflip",
    "rotate_min",
    "rotate_max",
    "mean",
];

struct Entry<'a> {
    line: usize,
    value: &'a str,
}

fn parse_num<T: FromStr>(e: &Entry<'_>, key: &str) -> Result<T> {
    e.value.parse().map_err(|_| Error::Config {
        line: e.line,
        msg: format!("`{key}`: cannot parse `{}`", e.value),
    })
}

fn parse_list<T: FromStr>(e: &Entry<'_>, key: &str, sep: char) -> Result<Vec<T>> {
    e.value
        .split(sep)
        .map(|p| {
            p.trim().parse().map_err(|_| Error::Config {
                line: e.line,
                msg: format!("`{key}`: cannot parse `{}`", p.trim()),
            })
        })
        .collect()
}

fn parse_array<T: FromStr + Copy, const N: usize>(e: &Entry<'_>, key: &str) -> Result<[T; N]> {
    let v: Vec<T> = parse_list(e, key, ',')?;
    v.try_into().map_err(|v: Vec<T>| Error::Config {
        line: e.line,
        msg: format!("`{key}` needs {N} comma-separated values, got {}", v.len()),
    })
}

fn parse_bool(e: &Entry<'_>, key: &str) -> Result<bool> {
    match e.value {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        v => Err(Error::Config {
            line: e.line,
            msg: format!("`{key}` expects true/false, got `{v}`"),
        }),
    }
}

fn invalid(e: &Entry<'_>, msg: String) -> Error {
    Error::Config { line: e.line, msg }
}

pub fn parse(text: &str) -> Result<RunConfig> {
    let mut entries: HashMap<&str, Entry<'_>> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return Err(Error::Config {
                line,
                msg: format!("expected `key = value`, got `{body}`"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(Error::Config {
                line,
                msg: format!("unknown key `{key}`"),
            });
        }
        if let Some(prev) = entries.insert(key, Entry { line, value }) {
            return Err(Error::Config {
                line,
                msg: format!("`{key}` already set on line {}", prev.line),
            });
        }
    }

    let classes = entries
        .get("num_classes")
        .map(|e| parse_num(e, "num_classes"))
        .transpose()?;
    let mut cfg = match entries.get("preset") {
        None => RunConfig::default(),
        Some(e) => match e.value {
            "default" => RunConfig::default(),
            "mini" => RunConfig::mini(4),
            v => return Err(invalid(e, format!("unknown preset `{v}` (default, mini)"))),
        },
    };
    if let Some(k) = classes {
        cfg.net.num_classes = k;
    }
    let net = &mut cfg.net;
    let train = &mut cfg.train;

    for (&key, e) in &entries {
        match key {
            "preset" | "num_classes" => {}
            "output_stride" => net.output_stride = parse_num(e, key)?,
            "hdrs" => net.hdrs = parse_array(e, key)?,
            "width_multiplier" => {
                net.width_multiplier = e
                    .value
                    .parse::<Ratio>()
                    .map_err(|err| invalid(e, format!("`{key}`: {err}")))?
            }
            "max_repeats" => {
                net.max_repeats = match e.value {
                    "none" => None,
                    _ => Some(parse_num(e, key)?),
                }
            }
            "init_seed" => cfg.init_seed = parse_num(e, key)?,
            "base_lr" => train.base_lr = parse_num(e, key)?,
            "power" => train.power = parse_num(e, key)?,
            "momentum" => train.momentum = parse_num(e, key)?,
            "weight_decay" => train.weight_decay = parse_num(e, key)?,
            "max_iter" => train.max_iter = parse_num(e, key)?,
            "batch" => train.batch = parse_num(e, key)?,
            "seed" => train.seed = parse_num(e, key)?,
            "crop" => {
                let [h, w] = parse_dims(e, key)?;
                train.augment.crop = (h, w);
            }
            "scale_min" => train.augment.scale_range.0 = parse_num(e, key)?,
            "scale_max" => train.augment.scale_range.1 = parse_num(e, key)?,
            "hflip" => train.augment.hflip = parse_bool(e, key)?,
            "rotate_min" => train.augment.rotate_deg.0 = parse_num(e, key)?,
            "rotate_max" => train.augment.rotate_deg.1 = parse_num(e, key)?,
            "mean" => train.augment.mean = parse_array(e, key)?,
            // module switches and their settings are applied below
            _ => {}
        }
    }

    if let Some(e) = entries.get("lrm") {
        net.lrm = parse_bool(e, "lrm")?.then(|| net.lrm.unwrap_or_default());
    }
    if let Some(l) = &mut net.lrm {
        for (key, field) in [
            ("lrm_shallow", &mut l.shallow),
            ("lrm_deep", &mut l.deep),
            ("lrm_reduction", &mut l.reduction),
        ] {
            if let Some(e) = entries.get(key) {
                *field = parse_num(e, key)?;
            }
        }
    } else if let Some(e) = ["lrm_shallow", "lrm_deep", "lrm_reduction"].iter().find_map(|k| entries.get(k)) {
        return Err(invalid(e, "LRM settings given while `lrm = off`".into()));
    }

    if let Some(e) = entries.get("mcim") {
        net.mcim = match e.value {
            "off" | "false" => None,
            "on" | "true" => Some(net.mcim.clone().unwrap_or_else(McimCfg::cityscapes)),
            "cityscapes" => Some(McimCfg::cityscapes()),
            "camvid" => Some(McimCfg::camvid()),
            "helen" => Some(McimCfg::helen()),
            v => return Err(invalid(e, format!("`mcim` expects on/off/cityscapes/camvid/helen, got `{v}`"))),
        };
    }
    let mcim_keys = ["mcim_dilations", "mcim_reduce", "mcim_groups", "mcim_global_ch"];
    if let Some(m) = &mut net.mcim {
        if let Some(e) = entries.get("mcim_dilations") {
            let sets: Vec<Vec<usize>> = e
                .value
                .split(';')
                .map(|s| parse_list(&Entry { line: e.line, value: s.trim() }, "mcim_dilations", ','))
                .collect::<Result<_>>()?;
            m.dilations = sets
                .try_into()
                .map_err(|_| invalid(e, "`mcim_dilations` needs three `;`-separated sets".into()))?;
        }
        if let Some(e) = entries.get("mcim_reduce") {
            m.reduce_ratio = e
                .value
                .parse()
                .map_err(|err| invalid(e, format!("`mcim_reduce`: {err}")))?;
        }
        if let Some(e) = entries.get("mcim_groups") {
            m.groups = parse_num(e, "mcim_groups")?;
        }
        if let Some(e) = entries.get("mcim_global_ch") {
            m.global_ch = parse_num(e, "mcim_global_ch")?;
        }
    } else if let Some(e) = mcim_keys.iter().find_map(|k| entries.get(k)) {
        return Err(invalid(e, "context-module settings given while `mcim = off`".into()));
    }

    cfg.net.validate()?;
    cfg.train.validate(cfg.net.output_stride)?;
    Ok(cfg)
}

fn parse_dims(e: &Entry<'_>, key: &str) -> Result<[usize; 2]> {
    let v: Vec<usize> = parse_list(e, key, 'x')?;
    v.try_into()
        .map_err(|_| invalid(e, format!("`{key}` expects HxW, got `{}`", e.value)))
}

fn join<T: ToString>(v: &[T], sep: &str) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(sep)
}

/// Every setting spelled out, so that `parse(&to_text(c)) == c` as long as
/// the stage widths and repeats are the built-in ones.
pub fn to_text(cfg: &RunConfig) -> String {
    let (n, t, a) = (&cfg.net, &cfg.train, &cfg.train.augment);
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("num_classes", n.num_classes.to_string());
    kv("output_stride", n.output_stride.to_string());
    kv("hdrs", join(&n.hdrs, ","));
    kv("width_multiplier", n.width_multiplier.to_string());
    kv("max_repeats", n.max_repeats.map_or("none".into(), |r| r.to_string()));
    let lrm: Option<LrmCfg> = n.lrm;
    kv("lrm", lrm.is_some().to_string());
    if let Some(l) = lrm {
        kv("lrm_shallow", l.shallow.to_string());
        kv("lrm_deep", l.deep.to_string());
        kv("lrm_reduction", l.reduction.to_string());
    }
    match &n.mcim {
        None => kv("mcim", "off".into()),
        Some(m) => {
            kv("mcim", "on".into());
            let sets: Vec<String> = m.dilations.iter().map(|d| join(d, ",")).collect();
            kv("mcim_dilations", sets.join("; "));
            kv("mcim_reduce", m.reduce_ratio.to_string());
            kv("mcim_groups", m.groups.to_string());
            kv("mcim_global_ch", m.global_ch.to_string());
        }
    }
    kv("init_seed", cfg.init_seed.to_string());
    kv("base_lr", t.base_lr.to_string());
    kv("power", t.power.to_string());
    kv("momentum", t.momentum.to_string());
    kv("weight_decay", t.weight_decay.to_string());
    kv("max_iter", t.max_iter.to_string());
    kv("batch", t.batch.to_string());
    kv("seed", t.seed.to_string());
    kv("crop", format!("{}x{}", a.crop.0, a.crop.1));
    kv("scale_min", a.scale_range.0.to_string());
    kv("scale_max", a.scale_range.1.to_string());
    kv("hflip", a.hflip.to_string());
    kv("rotate_min", a.rotate_deg.0.to_string());
    kv("rotate_max", a.rotate_deg.1.to_string());
    kv("mean", join(&a.mean, ","));
    s
}
