//! Network checkpoints: one container record per stored parameter, plus the
//! run configuration (`meta.config`, UTF-8 text as u8) and the input mean
//! (`meta.mean`, f32 `[3]`).

use std::collections::HashMap;
use std::path::Path;

use cifrenet_core::blocks::{build_cifrenet, Network};

use crate::config::{self, RunConfig};
use crate::container::{load_container, save_container, Record, TensorData};
use crate::error::{Error, Result};

pub const META_CONFIG: &str = "meta.config";
pub const META_MEAN: &str = "meta.mean";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub mean: [f32; 3],
    pub net: Network<f32>,
}

pub fn to_records(config: &RunConfig, mean: &[f32; 3], net: &Network<f32>) -> Vec<Record> {
    let text = config::to_text(config).into_bytes();
    let mut records = vec![
        Record {
            name: META_CONFIG.into(),
            shape: vec![text.len()],
            data: TensorData::U8(text),
        },
        Record {
            name: META_MEAN.into(),
            shape: vec![3],
            data: TensorData::F32(mean.to_vec()),
        },
    ];
    records.extend(net.params.iter().map(|(_, p)| Record::from_tensor(p.name.clone(), &p.value)));
    records
}

pub fn save(path: &Path, config: &RunConfig, mean: &[f32; 3], net: &Network<f32>) -> Result<()> {
    save_container(path, &to_records(config, mean, net))
}

pub fn from_records(records: &[Record]) -> Result<Checkpoint> {
    let by_name: HashMap<&str, &Record> = records.iter().map(|r| (r.name.as_str(), r)).collect();
    let missing = |n: &str| Error::Invalid(format!("checkpoint lacks `{n}`"));
    let config = match &by_name.get(META_CONFIG).ok_or_else(|| missing(META_CONFIG))?.data {
        TensorData::U8(bytes) => {
            let text = std::str::from_utf8(bytes)
                .map_err(|_| Error::Invalid(format!("`{META_CONFIG}` is not UTF-8")))?;
            config::parse(text)?
        }
        _ => return Err(Error::Invalid(format!("`{META_CONFIG}` must be u8 text"))),
    };
    let mean = match &by_name.get(META_MEAN).ok_or_else(|| missing(META_MEAN))?.data {
        TensorData::F32(v) if v.len() == 3 => [v[0], v[1], v[2]],
        _ => return Err(Error::Invalid(format!("`{META_MEAN}` must be 3 f32 values"))),
    };
    let mut net = build_cifrenet::<f32>(&config.net, config.init_seed)?;
    let tensors = records
        .iter()
        .filter(|r| !r.name.starts_with("meta."))
        .map(|r| Ok((r.name.as_str(), r.to_tensor()?)))
        .collect::<Result<HashMap<_, _>>>()?;
    if tensors.len() != net.params.len() {
        return Err(Error::Invalid(format!(
            "checkpoint holds {} parameters, the configured network has {}",
            tensors.len(),
            net.params.len()
        )));
    }
    net.params.load(|name| tensors.get(name))?;
    Ok(Checkpoint { config, mean, net })
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    from_records(&load_container(path)?)
}
