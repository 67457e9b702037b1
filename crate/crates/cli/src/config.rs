//! Pipeline configuration file (TOML).

use std::collections::BTreeSet;
use std::path::Path;

use capsim_core::microsim::{StridePattern, UArchParams, WorkloadSpec};
use capsim_core::sampler::SamplerConfig;
use capsim_core::slicer::SlicerConfig;
use capsim_core::tokenizer::{ContextMatrixSpec, EncodeConfig};
use capsim_core::trace::Tag;
use capsim_predictor::train::TrainConfig;
use capsim_predictor::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::{PipelineError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root seed; every derived stream (workloads, splits, init, shuffling)
    /// is mixed from it.
    #[serde(default)]
    pub seed: u64,
    pub workload: WorkloadSection,
    #[serde(default)]
    pub uarch: UArchParams,
    #[serde(default)]
    pub slicer: SlicerConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub tokenizer: TokenizerSection,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub report: ReportSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSection {
    /// Committed instructions skipped before the first interval.
    pub warmup: u64,
    /// Committed instructions per interval.
    pub interval: u64,
    /// Intervals per workload; interval `k` starts `k * interval` after warm-up.
    #[serde(default = "one")]
    pub intervals: usize,
    pub sets: Vec<SetDef>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetDef {
    pub name: String,
    pub members: Vec<MemberDef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberDef {
    pub name: String,
    pub kind: Vec<Tag>,
    /// Static program size.
    pub length: usize,
    pub seed: u64,
    pub loop_depth: Option<u32>,
    pub branch_density: Option<f64>,
    pub stride: Option<StridePattern>,
}

impl MemberDef {
    pub fn spec(&self, root_seed: u64) -> WorkloadSpec {
        let mut s = WorkloadSpec::new(&self.kind, self.length, mix_seed(root_seed, self.seed));
        if let Some(d) = self.loop_depth {
            s.loop_depth = d;
        }
        if let Some(b) = self.branch_density {
            s.branch_density = b;
        }
        if let Some(p) = self.stride {
            s.stride_pattern = p;
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextKind {
    #[default]
    Desk,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerSection {
    pub l_token: usize,
    pub l_clip_max: usize,
    pub context: ContextKind,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        let e = EncodeConfig::default();
        TokenizerSection { l_token: e.l_token, l_clip_max: e.l_clip_max, context: ContextKind::Desk }
    }
}

impl TokenizerSection {
    pub fn context_spec(&self) -> ContextMatrixSpec {
        match self.context {
            ContextKind::Desk => ContextMatrixSpec::desk(),
            ContextKind::Full => ContextMatrixSpec::full(),
        }
    }

    pub fn encode_config(&self) -> EncodeConfig {
        EncodeConfig { l_token: self.l_token, l_clip_max: self.l_clip_max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub max_steps: Option<usize>,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lr: t.lr,
            momentum: t.momentum,
            batch_size: 8,
            epochs: t.epochs,
            patience: t.patience,
            max_steps: None,
            split: [0.8, 0.1, 0.1],
        }
    }
}

impl TrainSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.epochs,
            patience: self.patience,
            max_steps: self.max_steps,
            seed,
        }
    }
}

/// One microarchitecture variant of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRow {
    pub fetch_width: u32,
    pub issue_width: u32,
    pub commit_width: u32,
    pub rob_entries: u32,
}

impl SweepRow {
    pub fn apply(&self, base: &UArchParams) -> UArchParams {
        UArchParams {
            fetch_width: self.fetch_width,
            issue_width: self.issue_width,
            commit_width: self.commit_width,
            rob_entries: self.rob_entries,
            ..base.clone()
        }
    }

    pub fn of(p: &UArchParams) -> SweepRow {
        SweepRow { fetch_width: p.fetch_width, issue_width: p.issue_width, commit_width: p.commit_width, rob_entries: p.rob_entries }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Variants after the baseline row; each changes one parameter.
    pub rows: Vec<SweepRow>,
    pub finetune_epochs: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        let row = |f, i, c, r| SweepRow { fetch_width: f, issue_width: i, commit_width: c, rob_entries: r };
        SweepSection {
            rows: vec![row(4, 8, 8, 192), row(8, 4, 8, 192), row(8, 8, 4, 192), row(8, 8, 8, 128)],
            finetune_epochs: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    /// Inference passes timed per benchmark; the minimum is reported.
    pub timing_repeats: usize,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection { timing_repeats: 1 }
    }
}

/// SplitMix64 of `a` followed by `b`.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<PipelineConfig> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        PipelineConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        let w = &self.workload;
        if w.interval == 0 || w.intervals == 0 {
            return bad("workload.interval and workload.intervals must be >= 1".into());
        }
        if w.sets.is_empty() {
            return bad("at least one workload set is required".into());
        }
        let mut names = BTreeSet::new();
        for set in &w.sets {
            if !valid_name(&set.name) {
                return bad(format!("set name '{}' must be non-empty [A-Za-z0-9_-]", set.name));
            }
            if !names.insert(&set.name) {
                return bad(format!("duplicate set name '{}'", set.name));
            }
            if set.members.is_empty() {
                return bad(format!("set '{}' has no members", set.name));
            }
            let mut members = BTreeSet::new();
            for m in &set.members {
                if !valid_name(&m.name) || !members.insert(&m.name) {
                    return bad(format!("member '{}' of set '{}' is empty, malformed or duplicated", m.name, set.name));
                }
                m.spec(self.seed).validate().map_err(|e| PipelineError::Config(format!("{}/{}: {e}", set.name, m.name)))?;
            }
        }
        let cfg_err = |e: &dyn std::fmt::Display| PipelineError::Config(e.to_string());
        self.uarch.validate().map_err(|e| cfg_err(&e))?;
        for row in &self.sweep.rows {
            row.apply(&self.uarch).validate().map_err(|e| cfg_err(&e))?;
        }
        self.slicer.validate().map_err(|e| cfg_err(&e))?;
        self.sampler.validate().map_err(|e| cfg_err(&e))?;
        self.model.validate().map_err(|e| cfg_err(&e))?;
        self.train.train_config(0).validate().map_err(|e| cfg_err(&e))?;
        let t = &self.tokenizer;
        let m = self.tokenizer.context_spec().rows();
        if self.model.l_token != t.l_token || self.model.l_clip_max != t.l_clip_max || self.model.m != m {
            return bad(format!(
                "model shape (l_token {}, l_clip_max {}, m {}) must match the tokenizer ({}, {}, {m})",
                self.model.l_token, self.model.l_clip_max, self.model.m, t.l_token, t.l_clip_max
            ));
        }
        let s = self.train.split;
        if s.iter().any(|f| !(0.0..=1.0).contains(f)) || (s.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("train.split {s:?} must be fractions summing to 1"));
        }
        if s[0] == 0.0 {
            return bad("train.split needs a non-empty training fraction".into());
        }
        if self.report.timing_repeats == 0 {
            return bad("report.timing_repeats must be >= 1".into());
        }
        Ok(())
    }

    /// Every workload as (set index, set, member), in config order.
    pub fn benchmarks(&self) -> Vec<(usize, &SetDef, &MemberDef)> {
        let mut out = Vec::new();
        for (i, s) in self.workload.sets.iter().enumerate() {
            for m in &s.members {
                out.push((i, s, m));
            }
        }
        out
    }
}
