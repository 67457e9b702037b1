//! Commit-time-delimited slicing of interval traces into labelled clips.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{CodeTraceClip, CommittedRecord, IntervalTrace, RegisterSnapshot, TraceError};

#[derive(Debug, Error)]
pub enum SliceError {
    #[error("interval '{interval_id}' has {len} records; slicing needs at least 2")]
    EmptyTrace { interval_id: String, len: usize },
    #[error("invalid slicer config: {0}")]
    Config(String),
    #[error("snapshot unavailable: {0}")]
    Snapshot(String),
    #[error("interval '{interval_id}': {source}")]
    Interval { interval_id: String, source: Box<SliceError> },
    #[error("clip file line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SliceError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlicerConfig {
    pub l_min: usize,
    pub emit_residual: bool,
    pub time_begin: u64,
}

impl Default for SlicerConfig {
    fn default() -> Self {
        SlicerConfig { l_min: 100, emit_residual: false, time_begin: 0 }
    }
}

impl SlicerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l_min == 0 {
            return Err(SliceError::Config("l_min must be at least 1".into()));
        }
        Ok(())
    }
}

/// Supplies the architectural state before a given interval record.
/// Requests arrive in strictly increasing order of `idx`.
pub trait SnapshotSource {
    fn snapshot_before(&mut self, idx: usize) -> std::result::Result<RegisterSnapshot, SliceError>;
}

/// Serves the same snapshot for every request. Only meaningful when the
/// caller does not care about per-clip context.
pub struct FixedSnapshot(pub RegisterSnapshot);

impl SnapshotSource for FixedSnapshot {
    fn snapshot_before(&mut self, _idx: usize) -> std::result::Result<RegisterSnapshot, SliceError> {
        Ok(self.0.clone())
    }
}

/// Position and label of one clip within an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClipSpan {
    pub start: usize,
    pub len: usize,
    pub time: u64,
}

/// Boundary detection over commit times alone. Returns the labelled spans
/// and the start of the trailing residual (which may be empty only when
/// `commits` is empty).
pub fn slice_spans(commits: &[u64], l_min: usize, time_begin: u64) -> (Vec<ClipSpan>, usize) {
    let mut spans = Vec::new();
    if commits.is_empty() {
        return (spans, 0);
    }
    let mut start = 0;
    let mut begin = time_begin;
    for j in 1..commits.len() {
        let prev = commits[j - 1];
        // prev > begin can only fail for the first clip, when its records
        // all commit at time_begin; closing there would yield a zero label
        if j - start >= l_min && commits[j] != prev && prev > begin {
            spans.push(ClipSpan { start, len: j - start, time: prev - begin });
            begin = prev;
            start = j;
        }
    }
    (spans, start)
}

/// Trailing records that never closed a clip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResidualClip {
    pub interval_id: String,
    pub start_idx: usize,
    pub records: Vec<CommittedRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceOutput {
    pub clips: Vec<CodeTraceClip>,
    /// Present only with `emit_residual`.
    pub residual: Option<ResidualClip>,
}

pub fn slice_interval(trace: &IntervalTrace, cfg: &SlicerConfig, source: &mut dyn SnapshotSource) -> Result<SliceOutput> {
    cfg.validate()?;
    if trace.records.len() < 2 {
        return Err(SliceError::EmptyTrace { interval_id: trace.interval_id.clone(), len: trace.records.len() });
    }
    if trace.records[0].commit < cfg.time_begin {
        return Err(SliceError::Config(format!(
            "time_begin {} is after the first commit {}",
            cfg.time_begin, trace.records[0].commit
        )));
    }
    let commits: Vec<u64> = trace.records.iter().map(|r| r.commit).collect();
    let (spans, residual_start) = slice_spans(&commits, cfg.l_min, cfg.time_begin);
    let mut clips = Vec::with_capacity(spans.len());
    for span in spans {
        let start_snapshot = if span.start == 0 { trace.snapshot.clone() } else { source.snapshot_before(span.start)? };
        let records = trace.records[span.start..span.start + span.len].to_vec();
        let content_key = crate::tokenizer::content_key(records.iter().map(|r| &r.inst));
        clips.push(CodeTraceClip {
            interval_id: trace.interval_id.clone(),
            start_idx: span.start,
            records,
            time: span.time,
            start_snapshot,
            content_key,
        });
    }
    let residual = (cfg.emit_residual && residual_start < trace.records.len()).then(|| ResidualClip {
        interval_id: trace.interval_id.clone(),
        start_idx: residual_start,
        records: trace.records[residual_start..].to_vec(),
    });
    Ok(SliceOutput { clips, residual })
}

/// Slices every interval in parallel and concatenates the results ordered by
/// interval id. `source_for` builds the snapshot provider of one interval.
pub fn slice_corpus<'s, F>(traces: &[IntervalTrace], cfg: &SlicerConfig, source_for: F) -> Result<Vec<CodeTraceClip>>
where
    F: Fn(&IntervalTrace) -> Result<Box<dyn SnapshotSource + 's>> + Sync,
{
    cfg.validate()?;
    let mut order: Vec<&IntervalTrace> = traces.iter().collect();
    order.sort_by(|a, b| a.interval_id.cmp(&b.interval_id));
    let attach = |t: &IntervalTrace, e: SliceError| SliceError::Interval { interval_id: t.interval_id.clone(), source: Box::new(e) };
    let parts: Vec<Result<Vec<CodeTraceClip>>> = order
        .par_iter()
        .map(|t| {
            let mut src = source_for(t).map_err(|e| attach(t, e))?;
            slice_interval(t, cfg, src.as_mut()).map(|o| o.clips).map_err(|e| attach(t, e))
        })
        .collect();
    let mut clips = Vec::new();
    for p in parts {
        clips.extend(p?);
    }
    Ok(clips)
}

#[derive(Serialize, Deserialize)]
struct ClipLine {
    interval_id: String,
    start_idx: usize,
    len: usize,
    time: u64,
    content_key: String,
    snapshot_ref: usize,
    records: Vec<CommittedRecord>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotLine {
    #[serde(rename = "ref")]
    id: usize,
    snapshot: RegisterSnapshot,
}

/// Writes `.clips.jsonl` plus the `.snapshots.jsonl` it references.
/// Identical snapshots are stored once.
pub fn store_clips(clips: &[CodeTraceClip], clips_path: &Path, snapshots_path: &Path) -> Result<()> {
    let mut cw = BufWriter::new(File::create(clips_path)?);
    let mut sw = BufWriter::new(File::create(snapshots_path)?);
    let mut seen: HashMap<String, usize> = HashMap::new();
    for c in clips {
        let snap_json = serde_json::to_string(&c.start_snapshot).expect("snapshot serializes");
        let id = match seen.get(&snap_json) {
            Some(&id) => id,
            None => {
                let id = seen.len();
                writeln!(sw, "{{\"ref\":{id},\"snapshot\":{snap_json}}}")?;
                seen.insert(snap_json, id);
                id
            }
        };
        let line = ClipLine {
            interval_id: c.interval_id.clone(),
            start_idx: c.start_idx,
            len: c.records.len(),
            time: c.time,
            content_key: format!("{:016x}", c.content_key),
            snapshot_ref: id,
            records: c.records.clone(),
        };
        writeln!(cw, "{}", serde_json::to_string(&line).expect("clip serializes"))?;
    }
    cw.flush()?;
    sw.flush()?;
    Ok(())
}

pub fn load_clips(clips_path: &Path, snapshots_path: &Path) -> Result<Vec<CodeTraceClip>> {
    let mut snapshots: HashMap<usize, RegisterSnapshot> = HashMap::new();
    for (i, line) in BufReader::new(File::open(snapshots_path)?).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let s: SnapshotLine =
            serde_json::from_str(&line).map_err(|e| SliceError::Format { line: i + 1, msg: e.to_string() })?;
        snapshots.insert(s.id, s.snapshot);
    }
    let mut clips = Vec::new();
    for (i, line) in BufReader::new(File::open(clips_path)?).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fmt = |msg: String| SliceError::Format { line: i + 1, msg };
        let c: ClipLine = serde_json::from_str(&line).map_err(|e| fmt(e.to_string()))?;
        if c.len != c.records.len() {
            return Err(fmt(format!("len {} but {} records", c.len, c.records.len())));
        }
        let key = u64::from_str_radix(&c.content_key, 16).map_err(|e| fmt(e.to_string()))?;
        if key != crate::tokenizer::content_key(c.records.iter().map(|r| &r.inst)) {
            return Err(fmt("content_key does not match records".into()));
        }
        let start_snapshot =
            snapshots.get(&c.snapshot_ref).cloned().ok_or_else(|| fmt(format!("unknown snapshot_ref {}", c.snapshot_ref)))?;
        clips.push(CodeTraceClip {
            interval_id: c.interval_id,
            start_idx: c.start_idx,
            records: c.records,
            time: c.time,
            start_snapshot,
            content_key: key,
        });
    }
    Ok(clips)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Instruction, Mnemonic, Operand, Reg, RegisterSnapshot};

    fn snapshot() -> RegisterSnapshot {
        let mut s = RegisterSnapshot::new();
        for r in Reg::all() {
            s.set(r, 0);
        }
        s
    }

    fn trace(commits: &[u64]) -> IntervalTrace {
        let records = commits
            .iter()
            .enumerate()
            .map(|(i, &c)| CommittedRecord {
                inst: Instruction {
                    pc: 0x1000 + 4 * i as u64,
                    mnemonic: Mnemonic::Addi,
                    dsts: vec![Operand::Reg(Reg::gpr(1 + (i % 5) as u8))],
                    srcs: vec![Operand::Reg(Reg::gpr(1)), Operand::Const],
                    mem: None,
                    raw: format!("addi r{}, r1, {i}", 1 + i % 5),
                },
                commit: c,
            })
            .collect();
        IntervalTrace { interval_id: "t".into(), tags: Default::default(), snapshot: snapshot(), records }
    }

    fn slice(commits: &[u64], l_min: usize) -> SliceOutput {
        let t = trace(commits);
        let cfg = SlicerConfig { l_min, emit_residual: true, time_begin: 0 };
        slice_interval(&t, &cfg, &mut FixedSnapshot(snapshot())).unwrap()
    }

    #[test]
    fn worked_example() {
        let out = slice(&[10, 10, 12, 12, 15, 15, 18], 2);
        let got: Vec<(usize, usize, u64)> = out.clips.iter().map(|c| (c.start_idx, c.len(), c.time)).collect();
        assert_eq!(got, vec![(0, 2, 10), (2, 2, 2), (4, 2, 3)]);
        let r = out.residual.unwrap();
        assert_eq!((r.start_idx, r.records.len()), (6, 1));
        assert_eq!(out.clips.iter().map(|c| c.time).sum::<u64>(), 15);
    }

    #[test]
    fn constant_times_give_no_clips() {
        let out = slice(&[7; 20], 1);
        assert!(out.clips.is_empty());
        assert_eq!(out.residual.unwrap().records.len(), 20);
    }

    #[test]
    fn strictly_increasing_with_unit_l_min() {
        let commits = [3, 5, 9, 10, 20];
        let out = slice(&commits, 1);
        let times: Vec<u64> = out.clips.iter().map(|c| c.time).collect();
        assert_eq!(times, vec![3, 2, 4, 1]);
        assert!(out.clips.iter().all(|c| c.len() == 1));
    }

    #[test]
    fn time_begin_shifts_first_label() {
        let t = trace(&[10, 10, 12, 12, 15]);
        let cfg = SlicerConfig { l_min: 2, emit_residual: false, time_begin: 4 };
        let out = slice_interval(&t, &cfg, &mut FixedSnapshot(snapshot())).unwrap();
        assert_eq!(out.clips[0].time, 6);
        assert!(out.residual.is_none());
        let cfg = SlicerConfig { time_begin: 11, ..cfg };
        assert!(matches!(slice_interval(&t, &cfg, &mut FixedSnapshot(snapshot())), Err(SliceError::Config(_))));
    }

    #[test]
    fn short_traces_rejected() {
        let t = trace(&[1]);
        let err = slice_interval(&t, &SlicerConfig::default(), &mut FixedSnapshot(snapshot())).unwrap_err();
        assert!(matches!(err, SliceError::EmptyTrace { len: 1, .. }));
        let cfg = SlicerConfig { l_min: 0, ..SlicerConfig::default() };
        assert!(matches!(slice_interval(&trace(&[1, 2]), &cfg, &mut FixedSnapshot(snapshot())), Err(SliceError::Config(_))));
    }

    #[test]
    fn clip_file_round_trip() {
        let out = slice(&[10, 10, 12, 12, 15, 15, 18], 2);
        let dir = tempfile::tempdir().unwrap();
        let (cp, sp) = (dir.path().join("a.clips.jsonl"), dir.path().join("a.snapshots.jsonl"));
        store_clips(&out.clips, &cp, &sp).unwrap();
        assert_eq!(std::fs::read_to_string(&sp).unwrap().lines().count(), 1);
        assert_eq!(load_clips(&cp, &sp).unwrap(), out.clips);
    }

    #[test]
    fn corpus_is_ordered_and_tagged() {
        let mut a = trace(&[1, 1, 2, 2, 3, 3, 4]);
        a.interval_id = "b".into();
        let mut b = trace(&[5, 5, 6, 6, 7, 7, 8]);
        b.interval_id = "a".into();
        let cfg = SlicerConfig { l_min: 2, ..SlicerConfig::default() };
        let clips = slice_corpus(&[a, b], &cfg, |_| Ok(Box::new(FixedSnapshot(snapshot())))).unwrap();
        let ids: Vec<&str> = clips.iter().map(|c| c.interval_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "a", "a", "b", "b", "b"]);
    }
}
