//! Summation of clip predictions into interval and benchmark totals.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{PredictError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipPrediction {
    pub interval_id: String,
    pub start_idx: usize,
    pub predicted: f64,
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalEntry {
    pub interval_id: String,
    pub benchmark: String,
    /// How many times the interval stands for its benchmark.
    pub multiplicity: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Totals {
    pub intervals: BTreeMap<String, f64>,
    pub benchmarks: BTreeMap<String, f64>,
}

/// Sum of values in clip order (by `start_idx`).
fn ordered_sum(clips: &mut [&ClipPrediction], value: impl Fn(&ClipPrediction) -> f64) -> f64 {
    clips.sort_by_key(|c| c.start_idx);
    let mut total = 0.0;
    for c in clips.iter() {
        total += value(c);
    }
    total
}

fn totals(preds: &[ClipPrediction], intervals: &[IntervalEntry], value: impl Fn(&ClipPrediction) -> f64 + Copy) -> Result<Totals> {
    let mut by_interval: BTreeMap<&str, Vec<&ClipPrediction>> = BTreeMap::new();
    for p in preds {
        by_interval.entry(&p.interval_id).or_default().push(p);
    }
    let mut out = Totals::default();
    for iv in intervals {
        let clips = by_interval
            .get_mut(iv.interval_id.as_str())
            .ok_or_else(|| PredictError::MissingClip(iv.interval_id.clone()))?;
        let t = ordered_sum(clips, value);
        out.intervals.insert(iv.interval_id.clone(), t);
        *out.benchmarks.entry(iv.benchmark.clone()).or_insert(0.0) += iv.multiplicity as f64 * t;
    }
    Ok(out)
}

/// Predicted totals per interval and per benchmark.
pub fn predict_benchmark(preds: &[ClipPrediction], intervals: &[IntervalEntry]) -> Result<Totals> {
    totals(preds, intervals, |c| c.predicted)
}

/// The same aggregation over ground-truth labels.
pub fn label_totals(preds: &[ClipPrediction], intervals: &[IntervalEntry]) -> Result<Totals> {
    totals(preds, intervals, |c| c.label)
}
