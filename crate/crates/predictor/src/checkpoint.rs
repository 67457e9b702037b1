//! Binary model checkpoints: magic, format version, JSON header, then
//! little-endian tensor data in header order.

use std::io::Write;
use std::path::Path;

use capsim_core::tokenizer::vocab;
use serde::{Deserialize, Serialize};

use crate::model::{Model, ModelConfig, Params};
use crate::nn::Mat;
use crate::real::{Precision, Real};
use crate::{PredictError, Result};

const MAGIC: &[u8; 8] = b"CAPSIMCK";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    precision: Precision,
    vocab_hash: String,
    output_scale: f64,
    tensors: Vec<(String, (usize, usize))>,
    /// Extra caller metadata (training state, origin of the run).
    meta: serde_json::Value,
}

pub fn save<F: Real>(model: &Model<F>, meta: serde_json::Value, path: &Path) -> Result<()> {
    let header = Header {
        config: model.config.clone(),
        precision: F::PRECISION,
        vocab_hash: vocab().hash().to_string(),
        output_scale: model.output_scale.as_f64(),
        tensors: model.params.names.iter().cloned().zip(model.params.tensors.iter().map(|t| t.dim())).collect(),
        meta,
    };
    let json = serde_json::to_vec(&header).map_err(|e| PredictError::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(16 + json.len() + model.params.count() * F::BYTES);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for t in &model.params.tensors {
        for &v in t.iter() {
            v.put_le(&mut buf);
        }
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp)?;
    f.write_all(&buf)?;
    f.sync_all()?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

fn corrupt(msg: impl Into<String>) -> PredictError {
    PredictError::Checkpoint(msg.into())
}

pub fn load<F: Real>(path: &Path) -> Result<(Model<F>, serde_json::Value)> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes.get(20..20 + hlen).ok_or_else(|| corrupt("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| corrupt(e.to_string()))?;
    if header.vocab_hash != vocab().hash() {
        return Err(PredictError::VocabMismatch { found: header.vocab_hash, expected: vocab().hash().to_string() });
    }
    if header.precision != F::PRECISION {
        return Err(corrupt(format!("stored as {:?}, requested {:?}", header.precision, F::PRECISION)));
    }
    let mut off = 20 + hlen;
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for (name, (r, c)) in header.tensors {
        let n = r * c * F::BYTES;
        let data = bytes.get(off..off + n).ok_or_else(|| corrupt(format!("truncated tensor {name}")))?;
        let vals: Vec<F> = data.chunks_exact(F::BYTES).map(F::get_le).collect();
        tensors.push(Mat::from_shape_vec((r, c), vals).expect("sized"));
        names.push(name);
        off += n;
    }
    if off != bytes.len() {
        return Err(corrupt("trailing bytes"));
    }
    let model = Model::from_parts(header.config, Params { names, tensors }, F::lit(header.output_scale))?;
    Ok((model, header.meta))
}
