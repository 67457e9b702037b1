//! MAPE loss and SGD-with-momentum training.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{Grads, Model, Prepared};
use crate::nn::Mat;
use crate::real::Real;
use crate::{PredictError, Result};

pub fn mape_loss(prediction: f64, fact: f64) -> Result<f64> {
    if !(fact > 0.0) {
        return Err(PredictError::Domain(fact));
    }
    Ok((prediction - fact).abs() / fact)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub max_steps: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr: 0.001, momentum: 0.9, batch_size: 16, epochs: 200, patience: 10, max_steps: None, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.momentum) || self.batch_size == 0 {
            return Err(PredictError::Config("lr >= 0, momentum in [0,1), batch_size >= 1 required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainState<F> {
    pub velocity: Vec<Mat<F>>,
    pub epoch: usize,
    pub step: usize,
}

impl<F: Real> TrainState<F> {
    pub fn new(model: &Model<F>) -> TrainState<F> {
        TrainState { velocity: model.params.zeros_like(), epoch: 0, step: 0 }
    }
}

/// Mean MAPE of a batch and its exact gradient. Per-clip work runs in
/// parallel; gradients are summed in batch order.
pub fn batch_gradient<F: Real>(model: &Model<F>, batch: &[&Prepared]) -> Result<(f64, Vec<f64>, Grads<F>)> {
    let b = batch.len() as f64;
    let parts: Vec<Result<(f64, Grads<F>)>> = batch
        .par_iter()
        .map(|p| {
            let fw = model.forward(p)?;
            let pred = fw.prediction.as_f64();
            mape_loss(pred, p.label)?;
            let sign = if pred > p.label { 1.0 } else if pred < p.label { -1.0 } else { 0.0 };
            let g = model.backward(p, &fw, F::lit(sign / p.label / b));
            Ok((pred, g))
        })
        .collect();
    let mut total = model.params.zeros_like();
    let mut loss = 0.0;
    let mut preds = Vec::with_capacity(batch.len());
    for (part, p) in parts.into_iter().zip(batch) {
        let (pred, g) = part?;
        loss += mape_loss(pred, p.label)?;
        preds.push(pred);
        for (t, gi) in total.iter_mut().zip(&g) {
            *t += gi;
        }
    }
    Ok((loss / b, preds, total))
}

/// One momentum step: `v ← μv + g`, `p ← p − lr·v`. Returns the batch loss.
pub fn train_step<F: Real>(model: &mut Model<F>, state: &mut TrainState<F>, batch: &[&Prepared], cfg: &TrainConfig) -> Result<f64> {
    let (loss, _, grads) = batch_gradient(model, batch)?;
    for (name, g) in model.params.names.iter().zip(&grads) {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(PredictError::NonFiniteGrad { tensor: name.clone(), step: state.step });
        }
    }
    let (lr, mu) = (F::lit(cfg.lr), F::lit(cfg.momentum));
    for ((p, v), g) in model.params.tensors.iter_mut().zip(state.velocity.iter_mut()).zip(&grads) {
        v.zip_mut_with(g, |vi, &gi| *vi = mu * *vi + gi);
        p.zip_mut_with(v, |pi, &vi| *pi -= lr * vi);
    }
    state.step += 1;
    Ok(loss)
}

/// Per-clip predictions and mean MAPE over a set.
pub fn evaluate<F: Real>(model: &Model<F>, set: &[Prepared]) -> Result<(f64, Vec<f64>)> {
    let preds: Vec<Result<f64>> = set.par_iter().map(|p| Ok(model.forward(p)?.prediction.as_f64())).collect();
    let preds: Vec<f64> = preds.into_iter().collect::<Result<_>>()?;
    if preds.is_empty() {
        return Ok((0.0, preds));
    }
    let mut total = 0.0;
    for (pred, p) in preds.iter().zip(set) {
        total += mape_loss(*pred, p.label)?;
    }
    Ok((total / set.len() as f64, preds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    /// Mean batch loss over the epoch.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct History {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val: Option<f64>,
    pub stopped_early: bool,
    pub steps: usize,
}

/// Trains until the epoch or step budget runs out or validation MAPE stops
/// improving; the best-validation parameters are restored at the end.
pub fn fit<F: Real>(
    model: &mut Model<F>,
    train: &[Prepared],
    val: &[Prepared],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<History> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(PredictError::Config("empty training set".into()));
    }
    let mut state = TrainState::new(model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = History::default();
    let mut best: Option<(f64, crate::model::Params<F>)> = None;
    let mut since_best = 0;
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| state.step >= m) {
                break;
            }
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &train[i]).collect();
            loss_sum += train_step(model, &mut state, &batch, cfg)? * batch.len() as f64;
            seen += batch.len();
        }
        if seen == 0 {
            break;
        }
        state.epoch = epoch + 1;
        let val_loss = if val.is_empty() { None } else { Some(evaluate(model, val)?.0) };
        let log = EpochLog { epoch, steps: state.step, train_loss: loss_sum / seen as f64, val_loss };
        on_epoch(&log);
        let score = val_loss.unwrap_or(log.train_loss);
        history.epochs.push(log);
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, model.params.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                history.stopped_early = true;
                break 'epochs;
            }
        }
        if cfg.max_steps.is_some_and(|m| state.step >= m) {
            break;
        }
    }
    if let Some((score, params)) = best {
        model.params = params;
        history.best_val = (!val.is_empty()).then_some(score);
    }
    history.steps = state.step;
    Ok(history)
}

/// Mean training label divided by softplus(0), so an untrained head starts
/// near the average clip time.
pub fn output_scale_for(labels: &[f64]) -> f64 {
    if labels.is_empty() {
        return 1.0;
    }
    let mean = labels.iter().sum::<f64>() / labels.len() as f64;
    mean / std::f64::consts::LN_2
}
