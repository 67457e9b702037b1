//! Content-class grouping and two-regime reduction of the clip corpus.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::CodeTraceClip;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("invalid sampler config: {0}")]
    Config(String),
    #[error("no classes to sample")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SampleError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub threshold: usize,
    pub coefficient: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { threshold: 200, coefficient: 0.02, seed: 0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.threshold < 1 {
            return Err(SampleError::Config("threshold must be at least 1".into()));
        }
        if !(self.coefficient > 0.0 && self.coefficient <= 1.0) {
            return Err(SampleError::Config(format!("coefficient {} outside (0, 1]", self.coefficient)));
        }
        Ok(())
    }

    /// Members kept by an above-threshold class of `count` clips.
    pub fn keep_count(&self, count: usize) -> usize {
        ((count as f64 * self.coefficient).round() as usize).clamp(1, count)
    }

    /// Period of below-threshold class selection.
    pub fn period(&self) -> usize {
        ((1.0 / self.coefficient).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipClass {
    pub content_key: u64,
    /// Corpus indices in corpus order.
    pub members: Vec<usize>,
    pub first_seen: usize,
}

impl ClipClass {
    pub fn count(&self) -> usize {
        self.members.len()
    }
}

/// Groups corpus positions by key; classes come out in first-seen order.
pub fn group_keys(keys: &[u64]) -> Vec<ClipClass> {
    let mut index: HashMap<u64, usize> = HashMap::new();
    let mut classes: Vec<ClipClass> = Vec::new();
    for (i, &k) in keys.iter().enumerate() {
        let c = *index.entry(k).or_insert_with(|| {
            classes.push(ClipClass { content_key: k, members: Vec::new(), first_seen: i });
            classes.len() - 1
        });
        classes[c].members.push(i);
    }
    classes
}

pub fn group_classes(clips: &[CodeTraceClip]) -> Vec<ClipClass> {
    group_keys(&clips.iter().map(|c| c.content_key).collect::<Vec<_>>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Above,
    Below,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub content_key: String,
    pub regime: Regime,
    pub before: usize,
    pub after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerReport {
    pub threshold: usize,
    pub coefficient: f64,
    pub seed: u64,
    pub before: usize,
    pub after: usize,
    pub classes: Vec<ClassReport>,
}

impl SamplerReport {
    pub fn store(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("report serializes"))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    /// Retained corpus indices, ascending.
    pub selected: Vec<usize>,
    pub report: SamplerReport,
}

/// Evenly spaced picks `floor(j * n / k)` for `j < k`.
fn periodic_pick(members: &[usize], keep: usize) -> Vec<usize> {
    let n = members.len();
    (0..keep).map(|j| members[j * n / keep]).collect()
}

pub fn sample(classes: &[ClipClass], cfg: &SamplerConfig) -> Result<SampleOutcome> {
    cfg.validate()?;
    if classes.is_empty() {
        return Err(SampleError::Empty);
    }
    let mut after: HashMap<u64, usize> = HashMap::new();
    let mut selected = Vec::new();

    let mut below: Vec<&ClipClass> = Vec::new();
    for c in classes {
        if c.count() > cfg.threshold {
            let picks = periodic_pick(&c.members, cfg.keep_count(c.count()));
            after.insert(c.content_key, picks.len());
            selected.extend(picks);
        } else {
            below.push(c);
        }
    }
    // first_seen is unique, so this order is total and the seed never matters
    below.sort_by(|a, b| b.count().cmp(&a.count()).then(a.first_seen.cmp(&b.first_seen)));
    let p = cfg.period();
    for c in below.iter().step_by(p) {
        after.insert(c.content_key, c.count());
        selected.extend(&c.members);
    }
    selected.sort_unstable();

    let before: usize = classes.iter().map(|c| c.count()).sum();
    let report = SamplerReport {
        threshold: cfg.threshold,
        coefficient: cfg.coefficient,
        seed: cfg.seed,
        before,
        after: selected.len(),
        classes: classes
            .iter()
            .map(|c| ClassReport {
                content_key: format!("{:016x}", c.content_key),
                regime: if c.count() > cfg.threshold { Regime::Above } else { Regime::Below },
                before: c.count(),
                after: after.get(&c.content_key).copied().unwrap_or(0),
            })
            .collect(),
    };
    Ok(SampleOutcome { selected, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(spec: &[(u64, usize)]) -> Vec<u64> {
        // round-robin interleave so classes are spread across the corpus
        let mut left: Vec<(u64, usize)> = spec.to_vec();
        let mut out = Vec::new();
        while left.iter().any(|(_, n)| *n > 0) {
            for (k, n) in left.iter_mut() {
                if *n > 0 {
                    out.push(*k);
                    *n -= 1;
                }
            }
        }
        out
    }

    #[test]
    fn worked_example_keeps_176() {
        let corpus = keys(&[(0xA, 1000), (0xB, 300), (0xC, 150), (0xD, 3), (0xE, 1)]);
        let classes = group_keys(&corpus);
        let counts: Vec<usize> = classes.iter().map(|c| c.count()).collect();
        assert_eq!(counts, vec![1000, 300, 150, 3, 1]);
        let out = sample(&classes, &SamplerConfig::default()).unwrap();
        assert_eq!(out.selected.len(), 176);
        let after: Vec<usize> = out.report.classes.iter().map(|c| c.after).collect();
        assert_eq!(after, vec![20, 6, 150, 0, 0]);
    }

    #[test]
    fn unit_coefficient_is_identity() {
        let corpus = keys(&[(1, 500), (2, 30), (3, 1)]);
        let cfg = SamplerConfig { coefficient: 1.0, ..SamplerConfig::default() };
        let out = sample(&group_keys(&corpus), &cfg).unwrap();
        assert_eq!(out.selected, (0..corpus.len()).collect::<Vec<_>>());
    }

    #[test]
    fn singleton_survives() {
        for threshold in [1, 200] {
            let cfg = SamplerConfig { threshold, ..SamplerConfig::default() };
            let out = sample(&group_keys(&[42]), &cfg).unwrap();
            assert_eq!(out.selected, vec![0]);
        }
    }

    #[test]
    fn config_errors() {
        let classes = group_keys(&[1]);
        assert!(sample(&classes, &SamplerConfig { threshold: 0, ..SamplerConfig::default() }).is_err());
        assert!(sample(&classes, &SamplerConfig { coefficient: 0.0, ..SamplerConfig::default() }).is_err());
        assert!(sample(&classes, &SamplerConfig { coefficient: 1.5, ..SamplerConfig::default() }).is_err());
        assert!(matches!(sample(&[], &SamplerConfig::default()), Err(SampleError::Empty)));
    }

    #[test]
    fn periodic_pick_spacing() {
        let m: Vec<usize> = (100..110).collect();
        assert_eq!(periodic_pick(&m, 3), vec![100, 103, 106]);
        assert_eq!(periodic_pick(&m, 10), m);
    }
}
