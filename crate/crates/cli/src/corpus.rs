//! Trace generation with the timing oracle, and the sliced/encoded corpus.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use capsim_core::microsim::{generate_program, simulate, MixFractions, Program, Replayer, SimBudget, UArchParams};
use capsim_core::slicer::{slice_corpus, SnapshotSource};
use capsim_core::tokenizer::{encode_clip, EncodedClip};
use capsim_core::trace::{load_interval, store_interval, tags_label, CodeTraceClip, IntervalTrace};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{io_err, mkdirs, read_json, require, write_json, Layout};
use crate::config::PipelineConfig;
use crate::{PipelineError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkGen {
    /// `<set>/<member>`.
    pub id: String,
    pub set: String,
    pub member: String,
    pub tags: String,
    pub seed: u64,
    pub intervals: usize,
    pub committed: u64,
    pub total_cycles: u64,
    /// Wall-clock spent in the timing oracle for all intervals.
    pub oracle_seconds: f64,
    pub static_mix: MixFractions,
    pub dynamic_mix: MixFractions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    pub uarch: UArchParams,
    pub benchmarks: Vec<BenchmarkGen>,
}

pub fn interval_id(set: &str, member: &str, k: usize) -> String {
    format!("{set}/{member}/{k}")
}

/// `<set>/<member>` of an interval id.
pub fn benchmark_of(interval_id: &str) -> &str {
    interval_id.rsplit_once('/').map_or(interval_id, |(b, _)| b)
}

pub fn set_of(interval_id: &str) -> &str {
    interval_id.split_once('/').map_or(interval_id, |(s, _)| s)
}

/// Generates every program and runs the oracle on each interval, writing
/// programs, traces and `gen.json` under `layout`.
pub fn generate(cfg: &PipelineConfig, params: &UArchParams, layout: &Layout) -> Result<GenSummary> {
    let w = &cfg.workload;
    for set in &w.sets {
        mkdirs(&layout.traces().join(&set.name))?;
    }
    let benches = cfg.benchmarks();
    let results: Vec<Result<BenchmarkGen>> = benches
        .par_iter()
        .map(|(_, set, member)| {
            let spec = member.spec(cfg.seed);
            let program = generate_program(&spec)?;
            let program_path = layout.program(&set.name, &member.name);
            std::fs::write(&program_path, program.to_json()).map_err(io_err(&program_path))?;
            let mut seconds = 0.0;
            let mut committed = 0;
            let mut cycles = 0;
            let mut mnemonics = Vec::new();
            for k in 0..w.intervals {
                let budget = SimBudget { warmup: w.warmup + k as u64 * w.interval, interval: w.interval };
                let t = Instant::now();
                let run = simulate(&program, params, budget)?;
                seconds += t.elapsed().as_secs_f64();
                committed += run.trace.records.len() as u64;
                cycles += run.trace.records.last().map_or(0, |r| r.commit);
                mnemonics.extend(run.trace.records.iter().map(|r| r.inst.mnemonic));
                let mut trace = run.trace;
                trace.interval_id = interval_id(&set.name, &member.name, k);
                let path = layout.trace(&set.name, &member.name, k);
                store_interval(&trace, &path)?;
            }
            Ok(BenchmarkGen {
                id: format!("{}/{}", set.name, member.name),
                set: set.name.clone(),
                member: member.name.clone(),
                tags: tags_label(&spec.kind),
                seed: spec.seed,
                intervals: w.intervals,
                committed,
                total_cycles: cycles,
                oracle_seconds: seconds,
                static_mix: MixFractions::of(program.code.iter().map(|op| op.mnemonic()).collect::<Vec<_>>().iter()),
                dynamic_mix: MixFractions::of(mnemonics.iter()),
            })
        })
        .collect();
    let summary = GenSummary { uarch: params.clone(), benchmarks: results.into_iter().collect::<Result<_>>()? };
    write_json(&layout.gen_summary(), &summary)?;
    Ok(summary)
}

/// Every interval trace of a generated directory, with its program.
pub struct Traces {
    pub traces: Vec<IntervalTrace>,
    programs: BTreeMap<String, Program>,
    warmup: u64,
    interval: u64,
}

impl Traces {
    pub fn load(cfg: &PipelineConfig, layout: &Layout) -> Result<Traces> {
        let mut programs = BTreeMap::new();
        let mut paths = Vec::new();
        for (_, set, m) in cfg.benchmarks() {
            let p = layout.program(&set.name, &m.name);
            let text = std::fs::read_to_string(require(&p)?).map_err(io_err(&p))?;
            programs.insert(format!("{}/{}", set.name, m.name), Program::from_json(&text)?);
            for k in 0..cfg.workload.intervals {
                paths.push(layout.trace(&set.name, &m.name, k));
            }
        }
        let traces: Vec<Result<IntervalTrace>> =
            paths.par_iter().map(|p| Ok(load_interval(require(p)?)?)).collect();
        Ok(Traces {
            traces: traces.into_iter().collect::<Result<_>>()?,
            programs,
            warmup: cfg.workload.warmup,
            interval: cfg.workload.interval,
        })
    }

    fn source(&self, t: &IntervalTrace) -> capsim_core::slicer::Result<Box<dyn SnapshotSource + '_>> {
        let k: u64 = t.interval_id.rsplit_once('/').and_then(|(_, k)| k.parse().ok()).unwrap_or(0);
        let program = self.programs.get(benchmark_of(&t.interval_id)).ok_or_else(|| {
            capsim_core::slicer::SliceError::Config(format!("no program for interval {}", t.interval_id))
        })?;
        Ok(Box::new(Replayer::new(program, self.warmup + k * self.interval)))
    }

    /// Commit-time span covered by an interval's clips.
    pub fn span(&self, interval_id: &str, clips: &[&CodeTraceClip], time_begin: u64) -> Option<u64> {
        let t = self.traces.iter().find(|t| t.interval_id == interval_id)?;
        let end = clips.iter().map(|c| c.start_idx + c.len()).max()?;
        Some(t.records[end - 1].commit - time_begin)
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    /// Ordered by interval id, then start index.
    pub clips: Vec<CodeTraceClip>,
    pub encoded: Vec<EncodedClip>,
}

pub fn build_corpus(cfg: &PipelineConfig, traces: &Traces) -> Result<Corpus> {
    let clips = slice_corpus(&traces.traces, &cfg.slicer, |t| traces.source(t))?;
    let spec = cfg.tokenizer.context_spec();
    let enc = cfg.tokenizer.encode_config();
    let encoded: Vec<Result<EncodedClip>> = clips.par_iter().map(|c| Ok(encode_clip(c, &spec, enc)?)).collect();
    Ok(Corpus { encoded: encoded.into_iter().collect::<Result<_>>()?, clips })
}

/// Reads the generation summary of a directory.
pub fn load_gen(layout: &Layout) -> Result<GenSummary> {
    read_json(&layout.gen_summary())
}

pub fn check_generated(layout: &Layout) -> Result<()> {
    if !Path::new(&layout.gen_summary()).exists() {
        return Err(PipelineError::MissingArtifact(layout.gen_summary()));
    }
    Ok(())
}
