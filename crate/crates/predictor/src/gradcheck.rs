//! Central finite-difference verification of analytic gradients.

use capsim_core::tokenizer::{vocab, EncodedClip, Token};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{Model, ModelConfig, Prepared};
use crate::real::Precision;
use crate::train::batch_gradient;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    /// `max|analytic − numeric| / max(max|numeric|, max|analytic|)`.
    pub rel_error: f64,
    pub max_abs_grad: f64,
}

/// The small configuration used for gradient checks.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        heads: 2,
        layers: 1,
        l_token: 6,
        l_clip_max: 8,
        m: 5,
        precision: Precision::Double,
        ..ModelConfig::default()
    }
}

/// Random well-formed clip: each instruction starts with REP, has a random
/// real prefix and PAD tail; one instruction is repeated.
pub fn random_clip(cfg: &ModelConfig, n_inst: usize, seed: u64) -> EncodedClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = vocab().len() as u16;
    let rep = vocab().index(Token::Rep);
    let pad = vocab().pad_index();
    let mut rows: Vec<Vec<u16>> = Vec::new();
    for i in 0..n_inst {
        if i == 2 {
            rows.push(rows[0].clone());
            continue;
        }
        let real = rng.gen_range(2..=cfg.l_token);
        let mut row = vec![rep];
        row.extend((1..real).map(|_| rng.gen_range(1..v)));
        row.resize(cfg.l_token, pad);
        rows.push(row);
    }
    EncodedClip {
        interval_id: format!("rand-{seed}"),
        start_idx: 0,
        content_key: seed,
        n_inst,
        l_token: cfg.l_token,
        tokens: rows.concat(),
        context: (0..cfg.m).map(|_| rng.gen_range(1..v)).collect(),
        label: 1.0,
    }
}

/// Compares batch-MAPE gradients against central differences with step `h`.
/// Labels should sit away from the predictions so the loss is smooth there.
pub fn check(model: &mut Model<f64>, batch: &[Prepared], h: f64) -> Result<Vec<TensorCheck>> {
    let refs: Vec<&Prepared> = batch.iter().collect();
    let (_, _, grads) = batch_gradient(model, &refs)?;
    let mut out = Vec::new();
    for t in 0..grads.len() {
        let mut max_diff: f64 = 0.0;
        let mut max_num: f64 = 0.0;
        let mut max_ana: f64 = 0.0;
        for j in 0..grads[t].len() {
            let ana = grads[t].as_slice().expect("standard layout")[j];
            let orig = model.params.tensors[t].as_slice().unwrap()[j];
            model.params.tensors[t].as_slice_mut().unwrap()[j] = orig + h;
            let plus = batch_gradient(model, &refs)?.0;
            model.params.tensors[t].as_slice_mut().unwrap()[j] = orig - h;
            let minus = batch_gradient(model, &refs)?.0;
            model.params.tensors[t].as_slice_mut().unwrap()[j] = orig;
            let num = (plus - minus) / (2.0 * h);
            max_diff = max_diff.max((ana - num).abs());
            max_num = max_num.max(num.abs());
            max_ana = max_ana.max(ana.abs());
        }
        let denom = max_num.max(max_ana).max(1e-300);
        out.push(TensorCheck {
            name: model.params.names[t].clone(),
            rel_error: if max_diff == 0.0 { 0.0 } else { max_diff / denom },
            max_abs_grad: max_ana,
        });
    }
    Ok(out)
}
