//! The five pipeline commands.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use capsim_core::microsim::UArchParams;
use capsim_core::sampler::{group_keys, sample, SamplerReport};
use capsim_core::slicer::store_clips;
use capsim_core::tokenizer::{load_encoded, store_encoded, EncodedClip};
use capsim_predictor::aggregate::{label_totals, predict_benchmark, ClipPrediction, IntervalEntry, Totals};
use capsim_predictor::checkpoint;
use capsim_predictor::train::{evaluate, fit, output_scale_for, History};
use capsim_predictor::{Model, Precision, Prepared, Real};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{csv_writer, io_err, mkdirs, read_json, require, update_manifest, write_json, Layout};
use crate::config::{mix_seed, PipelineConfig, SweepRow};
use crate::corpus::{benchmark_of, build_corpus, check_generated, generate, load_gen, set_of, Corpus, GenSummary, Traces};
use crate::split::{stratified, Split};
use crate::{PipelineError, Result};

/// Purpose-specific seeds derived from the root seed.
#[derive(Debug, Clone, Copy)]
pub struct Seeds {
    pub split: u64,
    pub init: u64,
    pub shuffle: u64,
}

impl Seeds {
    pub fn of(cfg: &PipelineConfig) -> Seeds {
        Seeds { split: mix_seed(cfg.seed, 1), init: mix_seed(cfg.seed, 2), shuffle: mix_seed(cfg.seed, 3) }
    }

    fn list(&self) -> [(&'static str, u64); 3] {
        [("split", self.split), ("init", self.init), ("shuffle", self.shuffle)]
    }
}

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

pub fn cmd_gen(cfg: &PipelineConfig, out: &Path) -> Result<GenSummary> {
    let layout = Layout::new(out);
    mkdirs(out)?;
    let summary = generate(cfg, &cfg.uarch, &layout)?;
    let seeds: Vec<(&str, u64)> = Vec::new();
    update_manifest(&layout, cfg, "gen", &seeds)?;
    Ok(summary)
}

/// Corpus after sampling and splitting. Indices refer to `corpus`.
pub struct Dataset {
    pub corpus: Corpus,
    pub selected: Vec<usize>,
    pub split: Split,
    pub sampler: SamplerReport,
}

impl Dataset {
    pub fn part(&self, p: usize) -> Vec<&EncodedClip> {
        self.split.parts()[p].iter().map(|&i| &self.corpus.encoded[i]).collect()
    }
}

/// Samples the corpus and splits the retained clips by content class.
fn dataset(cfg: &PipelineConfig, corpus: Corpus, seed: u64) -> Result<Dataset> {
    let keys: Vec<u64> = corpus.encoded.iter().map(|c| c.content_key).collect();
    let outcome = sample(&group_keys(&keys), &cfg.sampler)?;
    let selected = outcome.selected;
    let local = stratified(&selected.iter().map(|&i| keys[i]).collect::<Vec<_>>(), cfg.train.split, seed);
    let remap = |v: &Vec<usize>| v.iter().map(|&j| selected[j]).collect::<Vec<_>>();
    let split = Split { train: remap(&local.train), val: remap(&local.val), test: remap(&local.test) };
    Ok(Dataset { corpus, selected, split, sampler: outcome.report })
}

fn prepare_all<F: Real>(model: &Model<F>, clips: &[&EncodedClip]) -> Result<Vec<Prepared>> {
    let out: Vec<Result<Prepared>> = clips.par_iter().map(|c| Ok(model.prepare(c)?)).collect();
    out.into_iter().collect()
}

fn fresh_model<F: Real>(cfg: &PipelineConfig, seed: u64, train: &[&EncodedClip]) -> Result<Model<F>> {
    let mut mc = cfg.model.clone();
    mc.seed = seed;
    let mut model = Model::<F>::new(mc)?;
    model.output_scale = F::lit(output_scale_for(&train.iter().map(|c| c.label).collect::<Vec<_>>()));
    Ok(model)
}

/// Trains `model` in place on `train`, early-stopping on `val`.
fn train_on<F: Real>(
    model: &mut Model<F>,
    cfg: &PipelineConfig,
    train: &[&EncodedClip],
    val: &[&EncodedClip],
    epochs: usize,
    seed: u64,
) -> Result<History> {
    let tp = prepare_all(model, train)?;
    let vp = prepare_all(model, val)?;
    let mut tc = cfg.train.train_config(seed);
    tc.epochs = epochs;
    Ok(fit(model, &tp, &vp, &tc, |_| {})?)
}

fn mape_of<F: Real>(model: &Model<F>, clips: &[&EncodedClip]) -> Result<Option<(f64, Vec<f64>)>> {
    if clips.is_empty() {
        return Ok(None);
    }
    Ok(Some(evaluate(model, &prepare_all(model, clips)?)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

impl Distribution {
    pub fn of(values: &[f64]) -> Distribution {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| if v.is_empty() { 0.0 } else { v[((v.len() - 1) as f64 * p).round() as usize] };
        Distribution {
            count: v.len(),
            mean: if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 },
            p50: q(0.5),
            p90: q(0.9),
            p99: q(0.99),
            max: v.last().copied().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub benchmark: String,
    pub intervals: usize,
    pub clips: usize,
    pub predicted_total: f64,
    pub true_total: f64,
    /// Commit-time span of the sliced regions, from the traces.
    pub span_total: f64,
    pub error: f64,
    pub oracle_seconds: f64,
    pub inference_seconds: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: Precision,
    pub seed: u64,
    pub clips_total: usize,
    pub clips_sampled: usize,
    pub split_sizes: [usize; 3],
    pub output_scale: f64,
    pub train_mape: f64,
    pub val_mape: Option<f64>,
    pub test_mape: Option<f64>,
    /// Mean per-clip MAPE over the test split.
    pub average_error: f64,
    pub test_distribution: Distribution,
    pub benchmarks: Vec<BenchmarkResult>,
    pub interval_totals: Totals,
    pub history: History,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    /// Stage name → seconds.
    pub stages: BTreeMap<String, f64>,
    pub oracle_seconds: BTreeMap<String, f64>,
    pub inference_seconds: BTreeMap<String, f64>,
}

fn load_ds(cfg: &PipelineConfig, layout: &Layout, seed: u64) -> Result<(Dataset, Traces)> {
    check_generated(layout)?;
    let traces = Traces::load(cfg, layout)?;
    let corpus = build_corpus(cfg, &traces)?;
    Ok((dataset(cfg, corpus, seed)?, traces))
}

pub fn cmd_run(cfg: &PipelineConfig, out: &Path) -> Result<EvalReport> {
    match cfg.model.precision {
        Precision::Single => run_impl::<f32>(cfg, out),
        Precision::Double => run_impl::<f64>(cfg, out),
    }
}

fn run_impl<F: Real>(cfg: &PipelineConfig, out: &Path) -> Result<EvalReport> {
    let layout = Layout::new(out);
    let seeds = Seeds::of(cfg);
    let mut timings = Timings::default();
    let t0 = Instant::now();
    let (ds, traces) = load_ds(cfg, &layout, seeds.split)?;
    timings.stages.insert("slice_sample_encode".into(), t0.elapsed().as_secs_f64());

    mkdirs(&layout.corpus())?;
    store_clips(&ds.corpus.clips, &layout.clips(), &layout.snapshots())?;
    ds.sampler.store(&layout.sampler_report())?;
    let (m, lt) = (cfg.model.m, cfg.tokenizer.l_token);
    for (p, name) in SPLIT_NAMES.iter().enumerate() {
        let part: Vec<EncodedClip> = ds.part(p).into_iter().cloned().collect();
        store_encoded(&part, m, lt, &layout.split(name))?;
    }

    let (train, val, test) = (ds.part(0), ds.part(1), ds.part(2));
    if test.is_empty() {
        return Err(PipelineError::Inconsistent("test split is empty; enlarge the corpus or the test fraction".into()));
    }
    let t1 = Instant::now();
    let mut model = fresh_model::<F>(cfg, seeds.init, &train)?;
    let history = train_on(&mut model, cfg, &train, &val, cfg.train.epochs, seeds.shuffle)?;
    timings.stages.insert("train".into(), t1.elapsed().as_secs_f64());
    write_loss_curves(&layout.loss_curves(), &history)?;
    let meta = serde_json::json!({ "seed": cfg.seed, "init_seed": seeds.init, "best_epoch": history.best_epoch, "steps": history.steps });
    checkpoint::save(&model, meta, &layout.checkpoint())?;

    let train_mape = mape_of(&model, &train)?.map_or(0.0, |r| r.0);
    let val_r = mape_of(&model, &val)?;
    let (test_mape, test_preds) = mape_of(&model, &test)?.expect("test split is non-empty");
    let test_errors: Vec<f64> = test.iter().zip(&test_preds).map(|(c, p)| (p - c.label).abs() / c.label).collect();

    // every clip of every interval, timed per benchmark
    let split_of = split_labels(&ds);
    let mut by_bench: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in ds.corpus.encoded.iter().enumerate() {
        by_bench.entry(benchmark_of(&c.interval_id)).or_default().push(i);
    }
    let mut predicted = vec![0.0; ds.corpus.encoded.len()];
    for (bench, idxs) in &by_bench {
        let mut best = f64::INFINITY;
        for _ in 0..cfg.report.timing_repeats {
            let t = Instant::now();
            let preds: Vec<Result<f64>> = idxs
                .par_iter()
                .map(|&i| Ok(model.predict(&ds.corpus.encoded[i])?.as_f64()))
                .collect();
            best = best.min(t.elapsed().as_secs_f64());
            for (&i, p) in idxs.iter().zip(preds) {
                predicted[i] = p?;
            }
        }
        timings.inference_seconds.insert(bench.to_string(), best);
    }
    let clip_preds: Vec<ClipPrediction> = ds
        .corpus
        .encoded
        .iter()
        .zip(&predicted)
        .map(|(c, &p)| ClipPrediction { interval_id: c.interval_id.clone(), start_idx: c.start_idx, predicted: p, label: c.label })
        .collect();
    write_predictions(&layout.predictions(), &ds.corpus.encoded, &clip_preds, &split_of)?;

    let gen = load_gen(&layout)?;
    for b in &gen.benchmarks {
        timings.oracle_seconds.insert(b.id.clone(), b.oracle_seconds);
    }
    let entries = interval_entries(&ds.corpus.encoded);
    let pred_totals = predict_benchmark(&clip_preds, &entries)?;
    let true_totals = label_totals(&clip_preds, &entries)?;
    let mut spans: BTreeMap<&str, f64> = BTreeMap::new();
    for e in &entries {
        let clips: Vec<_> = ds.corpus.clips.iter().filter(|c| c.interval_id == e.interval_id).collect();
        let span = traces.span(&e.interval_id, &clips, cfg.slicer.time_begin).unwrap_or(0);
        *spans.entry(benchmark_of(&e.interval_id)).or_insert(0.0) += span as f64;
    }
    let benchmarks = pred_totals
        .benchmarks
        .iter()
        .map(|(b, &p)| {
            let t = true_totals.benchmarks[b];
            let oracle = timings.oracle_seconds.get(b).copied().unwrap_or(0.0);
            let inference = timings.inference_seconds.get(b.as_str()).copied().unwrap_or(0.0);
            BenchmarkResult {
                benchmark: b.clone(),
                intervals: entries.iter().filter(|e| &e.benchmark == b).count(),
                clips: by_bench.get(b.as_str()).map_or(0, |v| v.len()),
                predicted_total: p,
                true_total: t,
                span_total: spans.get(b.as_str()).copied().unwrap_or(0.0),
                error: (p - t).abs() / t,
                oracle_seconds: oracle,
                inference_seconds: inference,
                speedup: oracle / inference,
            }
        })
        .collect();
    let report = EvalReport {
        precision: F::PRECISION,
        seed: cfg.seed,
        clips_total: ds.corpus.encoded.len(),
        clips_sampled: ds.selected.len(),
        split_sizes: [train.len(), val.len(), test.len()],
        output_scale: model.output_scale.as_f64(),
        train_mape,
        val_mape: val_r.map(|r| r.0),
        test_mape: Some(test_mape),
        average_error: test_mape,
        test_distribution: Distribution::of(&test_errors),
        benchmarks,
        interval_totals: pred_totals,
        history,
    };
    write_json(&layout.report(), &report)?;
    timings.stages.insert("run_total".into(), t0.elapsed().as_secs_f64());
    write_json(&layout.timings(), &timings)?;
    update_manifest(&layout, cfg, "run", &seeds.list())?;
    Ok(report)
}

fn split_labels(ds: &Dataset) -> Vec<&'static str> {
    let mut out = vec!["unsampled"; ds.corpus.encoded.len()];
    for &i in &ds.selected {
        out[i] = "sampled";
    }
    for (p, name) in SPLIT_NAMES.iter().enumerate() {
        for &i in ds.split.parts()[p] {
            out[i] = name;
        }
    }
    out
}

fn interval_entries(clips: &[EncodedClip]) -> Vec<IntervalEntry> {
    let mut ids: Vec<&str> = clips.iter().map(|c| c.interval_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .map(|id| IntervalEntry { interval_id: id.into(), benchmark: benchmark_of(id).into(), multiplicity: 1 })
        .collect()
}

fn write_loss_curves(path: &Path, h: &History) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["epoch", "steps", "train_loss", "val_loss"])?;
    for e in &h.epochs {
        let val = e.val_loss.map_or(String::new(), |v| v.to_string());
        w.write_record([e.epoch.to_string(), e.steps.to_string(), e.train_loss.to_string(), val])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub interval_id: String,
    pub start_idx: usize,
    pub n_inst: usize,
    pub split: String,
    pub label: f64,
    pub predicted: f64,
}

fn write_predictions(path: &Path, clips: &[EncodedClip], preds: &[ClipPrediction], split: &[&str]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for ((c, p), s) in clips.iter().zip(preds).zip(split) {
        w.serialize(PredictionRow {
            interval_id: c.interval_id.clone(),
            start_idx: c.start_idx,
            n_inst: c.n_inst,
            split: s.to_string(),
            label: p.label,
            predicted: p.predicted,
        })?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let mut r = csv::Reader::from_path(require(path)?)?;
    let rows: std::result::Result<Vec<PredictionRow>, csv::Error> = r.deserialize().collect();
    Ok(rows?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossvalResult {
    pub sets: Vec<String>,
    /// `matrix[i][j]`: trained on set i, evaluated on the test split of set j.
    pub matrix: Vec<Vec<f64>>,
    pub diagonal_mean: f64,
    pub off_diagonal_mean: f64,
    pub split_sizes: Vec<[usize; 3]>,
}

pub fn cmd_crossval(cfg: &PipelineConfig, out: &Path) -> Result<CrossvalResult> {
    match cfg.model.precision {
        Precision::Single => crossval_impl::<f32>(cfg, out),
        Precision::Double => crossval_impl::<f64>(cfg, out),
    }
}

fn crossval_impl<F: Real>(cfg: &PipelineConfig, out: &Path) -> Result<CrossvalResult> {
    let layout = Layout::new(out);
    let seeds = Seeds::of(cfg);
    let sets: Vec<String> = cfg.workload.sets.iter().map(|s| s.name.clone()).collect();
    if sets.len() < 2 {
        return Err(PipelineError::Config("cross-validation needs at least two sets".into()));
    }
    check_generated(&layout)?;
    let traces = Traces::load(cfg, &layout)?;
    let corpus = build_corpus(cfg, &traces)?;
    let keys: Vec<u64> = corpus.encoded.iter().map(|c| c.content_key).collect();
    let selected = sample(&group_keys(&keys), &cfg.sampler)?.selected;

    let mut per_set: Vec<Split> = Vec::new();
    for (s, name) in sets.iter().enumerate() {
        let members: Vec<usize> = selected.iter().copied().filter(|&i| set_of(&corpus.encoded[i].interval_id) == name).collect();
        let local = stratified(&members.iter().map(|&i| keys[i]).collect::<Vec<_>>(), cfg.train.split, mix_seed(seeds.split, s as u64));
        let remap = |v: &Vec<usize>| v.iter().map(|&j| members[j]).collect::<Vec<_>>();
        per_set.push(Split { train: remap(&local.train), val: remap(&local.val), test: remap(&local.test) });
    }
    let pick = |v: &Vec<usize>| v.iter().map(|&i| &corpus.encoded[i]).collect::<Vec<_>>();
    for (s, sp) in per_set.iter().enumerate() {
        if sp.train.is_empty() || sp.test.is_empty() {
            return Err(PipelineError::Inconsistent(format!("set {} has an empty train or test split", sets[s])));
        }
    }

    let mut matrix = Vec::new();
    for (i, sp) in per_set.iter().enumerate() {
        let train = pick(&sp.train);
        let mut model = fresh_model::<F>(cfg, mix_seed(seeds.init, i as u64), &train)?;
        train_on(&mut model, cfg, &train, &pick(&sp.val), cfg.train.epochs, mix_seed(seeds.shuffle, i as u64))?;
        let mut row = Vec::new();
        for tj in &per_set {
            row.push(mape_of(&model, &pick(&tj.test))?.expect("non-empty test").0);
        }
        matrix.push(row);
    }
    let n = sets.len();
    let diagonal_mean = (0..n).map(|i| matrix[i][i]).sum::<f64>() / n as f64;
    let off: Vec<f64> = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| matrix[i][j]).collect();
    let result = CrossvalResult {
        sets: sets.clone(),
        off_diagonal_mean: off.iter().sum::<f64>() / off.len() as f64,
        diagonal_mean,
        matrix,
        split_sizes: per_set.iter().map(|s| [s.train.len(), s.val.len(), s.test.len()]).collect(),
    };
    let dir = layout.crossval();
    mkdirs(&dir)?;
    let path = dir.join("matrix.csv");
    let mut w = csv_writer(&path)?;
    let mut header = vec!["train\\test".to_string()];
    header.extend(sets.iter().cloned());
    w.write_record(&header)?;
    for (name, row) in sets.iter().zip(&result.matrix) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(io_err(&path))?;
    write_json(&dir.join("summary.json"), &result)?;
    update_manifest(&layout, cfg, "crossval", &seeds.list())?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub name: String,
    pub fetch_width: u32,
    pub issue_width: u32,
    pub commit_width: u32,
    pub rob_entries: u32,
    pub clips: usize,
    /// Test-split MAPE (after fine-tuning for changed rows).
    pub average_error: f64,
    pub finetune_first_epoch_loss: Option<f64>,
    pub scratch_first_epoch_loss: Option<f64>,
}

pub fn cmd_sweep(cfg: &PipelineConfig, out: &Path) -> Result<Vec<SweepResult>> {
    match cfg.model.precision {
        Precision::Single => sweep_impl::<f32>(cfg, out),
        Precision::Double => sweep_impl::<f64>(cfg, out),
    }
}

fn row_name(r: &SweepRow) -> String {
    format!("f{}-i{}-c{}-r{}", r.fetch_width, r.issue_width, r.commit_width, r.rob_entries)
}

fn sweep_impl<F: Real>(cfg: &PipelineConfig, out: &Path) -> Result<Vec<SweepResult>> {
    let layout = Layout::new(out);
    let seeds = Seeds::of(cfg);
    let (baseline, _) = checkpoint::load::<F>(require(&layout.checkpoint())?)?;
    let test = load_encoded(require(&layout.split("test"))?)?;
    let base_row = SweepRow::of(&cfg.uarch);
    let mut rows = vec![SweepResult {
        name: format!("baseline {}", row_name(&base_row)),
        fetch_width: base_row.fetch_width,
        issue_width: base_row.issue_width,
        commit_width: base_row.commit_width,
        rob_entries: base_row.rob_entries,
        clips: test.len(),
        average_error: mape_of(&baseline, &test.iter().collect::<Vec<_>>())?.map_or(0.0, |r| r.0),
        finetune_first_epoch_loss: None,
        scratch_first_epoch_loss: None,
    }];
    for (k, row) in cfg.sweep.rows.iter().enumerate() {
        let params: UArchParams = row.apply(&cfg.uarch);
        let sub = Layout::new(&layout.sweep().join(row_name(row)));
        mkdirs(&sub.root)?;
        generate(cfg, &params, &sub)?;
        let (ds, _) = load_ds(cfg, &sub, seeds.split)?;
        let (train, val, test) = (ds.part(0), ds.part(1), ds.part(2));
        if test.is_empty() {
            return Err(PipelineError::Inconsistent(format!("sweep row {} has an empty test split", row_name(row))));
        }
        let shuffle = mix_seed(seeds.shuffle, 100 + k as u64);
        let mut tuned = baseline.clone();
        let h = train_on(&mut tuned, cfg, &train, &val, cfg.sweep.finetune_epochs, shuffle)?;
        let mut scratch = fresh_model::<F>(cfg, seeds.init, &train)?;
        let hs = train_on(&mut scratch, cfg, &train, &[], 1, shuffle)?;
        rows.push(SweepResult {
            name: row_name(row),
            fetch_width: row.fetch_width,
            issue_width: row.issue_width,
            commit_width: row.commit_width,
            rob_entries: row.rob_entries,
            clips: test.len(),
            average_error: mape_of(&tuned, &test)?.expect("non-empty").0,
            finetune_first_epoch_loss: h.epochs.first().map(|e| e.train_loss),
            scratch_first_epoch_loss: hs.epochs.first().map(|e| e.train_loss),
        });
    }
    let dir = layout.sweep();
    mkdirs(&dir)?;
    let path = dir.join("table.csv");
    let mut w = csv_writer(&path)?;
    w.write_record([
        "config",
        "fetch_width",
        "issue_width",
        "commit_width",
        "rob_entries",
        "test_clips",
        "average_error",
        "finetune_first_epoch_loss",
        "scratch_first_epoch_loss",
    ])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in &rows {
        w.write_record([
            r.name.clone(),
            r.fetch_width.to_string(),
            r.issue_width.to_string(),
            r.commit_width.to_string(),
            r.rob_entries.to_string(),
            r.clips.to_string(),
            r.average_error.to_string(),
            opt(r.finetune_first_epoch_loss),
            opt(r.scratch_first_epoch_loss),
        ])?;
    }
    w.flush().map_err(io_err(&path))?;
    write_json(&dir.join("summary.json"), &rows)?;
    update_manifest(&layout, cfg, "sweep", &seeds.list())?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedRow {
    pub benchmark: String,
    pub oracle_seconds: f64,
    pub inference_seconds: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub benchmark: String,
    pub predicted_total: f64,
    pub true_total: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub speed: Vec<SpeedRow>,
    pub accuracy: Vec<AccuracyRow>,
    pub average_error: f64,
}

/// Read-only summary of a run directory: speed, accuracy and loss curves.
pub fn cmd_report(cfg: &PipelineConfig, out: &Path) -> Result<ReportSummary> {
    let layout = Layout::new(out);
    require(&layout.checkpoint())?;
    let report: EvalReport = read_json(&layout.report())?;
    let timings: Timings = read_json(&layout.timings())?;
    let rows = read_predictions(&layout.predictions())?;
    let preds: Vec<ClipPrediction> = rows
        .iter()
        .map(|r| ClipPrediction { interval_id: r.interval_id.clone(), start_idx: r.start_idx, predicted: r.predicted, label: r.label })
        .collect();
    let mut ids: Vec<&str> = rows.iter().map(|r| r.interval_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    let entries: Vec<IntervalEntry> = ids
        .into_iter()
        .map(|id| IntervalEntry { interval_id: id.into(), benchmark: benchmark_of(id).into(), multiplicity: 1 })
        .collect();
    let pred = predict_benchmark(&preds, &entries)?;
    let truth = label_totals(&preds, &entries)?;
    if pred != report.interval_totals {
        return Err(PipelineError::Inconsistent("predictions.csv totals differ from report.json".into()));
    }
    let accuracy: Vec<AccuracyRow> = pred
        .benchmarks
        .iter()
        .map(|(b, &p)| {
            let t = truth.benchmarks[b];
            AccuracyRow { benchmark: b.clone(), predicted_total: p, true_total: t, error: (p - t).abs() / t }
        })
        .collect();
    let speed: Vec<SpeedRow> = timings
        .inference_seconds
        .iter()
        .map(|(b, &inf)| {
            let oracle = timings.oracle_seconds.get(b).copied().unwrap_or(0.0);
            SpeedRow { benchmark: b.clone(), oracle_seconds: oracle, inference_seconds: inf, speedup: oracle / inf }
        })
        .collect();
    let test_rows: Vec<&PredictionRow> = rows.iter().filter(|r| r.split == "test").collect();
    let average_error = mean_mape(&test_rows);

    let dir = layout.summary();
    mkdirs(&dir)?;
    let mut w = csv_writer(&dir.join("speed.csv"))?;
    for r in &speed {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(&dir))?;
    let mut w = csv_writer(&dir.join("accuracy.csv"))?;
    for r in &accuracy {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(&dir))?;
    let curves = layout.loss_curves();
    std::fs::copy(require(&curves)?, dir.join("loss_curves.csv")).map_err(io_err(&curves))?;

    let mut text = String::new();
    text.push_str("Speed (timing oracle vs predictor inference, same machine, CPU only)\n");
    text.push_str(&format!("{:<28} {:>12} {:>12} {:>9}\n", "benchmark", "oracle_s", "infer_s", "speedup"));
    for r in &speed {
        text.push_str(&format!(
            "{:<28} {:>12.6} {:>12.6} {:>9.3}\n",
            r.benchmark, r.oracle_seconds, r.inference_seconds, r.speedup
        ));
    }
    text.push_str("\nAccuracy (benchmark totals, cycles)\n");
    text.push_str(&format!("{:<28} {:>14} {:>14} {:>8}\n", "benchmark", "predicted", "truth", "error"));
    for r in &accuracy {
        text.push_str(&format!(
            "{:<28} {:>14.1} {:>14.1} {:>7.2}%\n",
            r.benchmark,
            r.predicted_total,
            r.true_total,
            100.0 * r.error
        ));
    }
    text.push_str(&format!(
        "\nTest clips: {}  average error {:.2}%  (train {:.2}%)\n",
        test_rows.len(),
        100.0 * average_error,
        100.0 * report.train_mape
    ));
    text.push_str(&format!("Epochs: {}  best epoch: {}\n", report.history.epochs.len(), report.history.best_epoch));
    let cv = layout.crossval().join("summary.json");
    if cv.exists() {
        let c: CrossvalResult = read_json(&cv)?;
        text.push_str(&format!(
            "Cross-set MAPE: diagonal mean {:.2}%, off-diagonal mean {:.2}%\n",
            100.0 * c.diagonal_mean,
            100.0 * c.off_diagonal_mean
        ));
    }
    let path = dir.join("summary.txt");
    std::fs::write(&path, &text).map_err(io_err(&path))?;
    let summary = ReportSummary { speed, accuracy, average_error };
    write_json(&dir.join("summary.json"), &summary)?;
    update_manifest(&layout, cfg, "report", &[])?;
    Ok(summary)
}

fn mean_mape(rows: &[&PredictionRow]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for r in rows {
        total += (r.predicted - r.label).abs() / r.label;
    }
    total / rows.len() as f64
}
