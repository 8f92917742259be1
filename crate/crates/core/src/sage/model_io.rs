//! Model file: `RGBM` magic, `u16` version, `u64` header length, a JSON header
//! (config, normalization stats, history, tensor layout), then every parameter
//! and running statistic as little-endian `f64`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::NormalizationStats;

use super::network::{BnRunningStats, Params};
use super::train::{EpochRecord, Model, TrainConfig};

pub const MODEL_MAGIC: &[u8; 4] = b"RGBM";
pub const MODEL_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    stats: NormalizationStats,
    history: Vec<EpochRecord>,
    best_epoch: usize,
    input_dim: usize,
    tensors: Vec<(String, usize)>,
}

pub fn encode_model<W: Write>(model: &Model, w: &mut W) -> Result<()> {
    let mut tensors: Vec<(String, usize)> = Vec::new();
    let names = model.params.tensor_names();
    let mut k = 0;
    model.params.for_each(|s| {
        tensors.push((names[k].clone(), s.len()));
        k += 1;
    });
    for (l, r) in model.running.iter().enumerate() {
        tensors.push((format!("hidden{l}.running_mean"), r.mean.len()));
        tensors.push((format!("hidden{l}.running_var"), r.var.len()));
    }
    let header = Header {
        config: model.config.clone(),
        stats: model.stats.clone(),
        history: model.history.clone(),
        best_epoch: model.best_epoch,
        input_dim: model.input_dim(),
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let io = |e| Error::io("<model>", e);
    w.write_all(MODEL_MAGIC).map_err(io)?;
    w.write_all(&MODEL_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    let mut payload = model.params.flatten();
    for r in &model.running {
        payload.extend_from_slice(&r.mean);
        payload.extend_from_slice(&r.var);
    }
    for v in payload {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    Ok(())
}

pub fn decode_model<R: Read>(mut r: R) -> Result<Model> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io("<model>", e))?;
    if bytes.len() < 14 || &bytes[..4] != MODEL_MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[6..14].try_into().unwrap()) as usize;
    let body = &bytes[14..];
    if body.len() < hlen {
        return Err(Error::Format("truncated model header".into()));
    }
    let header: Header =
        serde_json::from_slice(&body[..hlen]).map_err(|e| Error::Format(e.to_string()))?;
    header.config.validate()?;
    let payload = &body[hlen..];
    if payload.len() % 8 != 0 {
        return Err(Error::Format("model payload is not a whole number of f64s".into()));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();

    let cfg = &header.config;
    let mut params = Params::init(
        header.input_dim,
        cfg.use_sage.then_some(cfg.sage_width),
        &cfg.mlp_widths,
        cfg.classes,
        0,
    );
    let n_params = params.len();
    let widths: usize = cfg.mlp_widths.iter().sum();
    let declared: usize = header.tensors.iter().map(|t| t.1).sum();
    if values.len() != n_params + 2 * widths || declared != values.len() {
        return Err(Error::Format(format!(
            "model payload holds {} values, layout needs {}",
            values.len(),
            n_params + 2 * widths
        )));
    }
    params.assign(&values[..n_params])?;
    let mut at = n_params;
    let mut running = Vec::with_capacity(cfg.mlp_widths.len());
    for &w in &cfg.mlp_widths {
        let mean = values[at..at + w].to_vec();
        let var = values[at + w..at + 2 * w].to_vec();
        at += 2 * w;
        running.push(BnRunningStats { mean, var });
    }
    Ok(Model {
        config: header.config,
        stats: header.stats,
        params,
        running,
        history: header.history,
        best_epoch: header.best_epoch,
    })
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    encode_model(model, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    decode_model(std::io::BufReader::new(file))
}
