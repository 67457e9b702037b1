use capsim_core::slicer::{slice_interval, FixedSnapshot, SliceOutput, SlicerConfig};
use capsim_core::trace::{CommittedRecord, Instruction, IntervalTrace, Mnemonic, Operand, Reg, RegisterSnapshot};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct transcription of the clip-generation pseudocode, iterating from
/// the second instruction and never closing a zero-time clip. Returns
/// (indices, time) per clip plus residual.
fn oracle(times: &[u64], l_min: usize, time_begin: u64) -> (Vec<(Vec<usize>, u64)>, Vec<usize>) {
    let mut out = Vec::new();
    let mut b = vec![0usize];
    let mut time_prev = times[0];
    let mut begin = time_begin;
    for (j, &time_now) in times.iter().enumerate().skip(1) {
        if b.len() >= l_min && time_now != time_prev && time_prev != begin {
            out.push((std::mem::take(&mut b), time_prev - begin));
            begin = time_prev;
        }
        b.push(j);
        time_prev = time_now;
    }
    (out, b)
}

fn snapshot() -> RegisterSnapshot {
    let mut s = RegisterSnapshot::new();
    for r in Reg::all() {
        s.set(r, 0);
    }
    s
}

fn trace_from(times: &[u64]) -> IntervalTrace {
    let ops = [Mnemonic::Add, Mnemonic::Mul, Mnemonic::Addi];
    let records = times
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let op = ops[i % 3];
            let srcs = if op == Mnemonic::Addi {
                vec![Operand::Reg(Reg::gpr(2)), Operand::Const]
            } else {
                vec![Operand::Reg(Reg::gpr(2)), Operand::Reg(Reg::gpr(3))]
            };
            CommittedRecord {
                inst: Instruction {
                    pc: 0x1000 + 4 * (i as u64 % 64),
                    mnemonic: op,
                    dsts: vec![Operand::Reg(Reg::gpr((i % 7) as u8))],
                    srcs,
                    mem: None,
                    raw: String::new(),
                },
                commit: c,
            }
        })
        .collect();
    IntervalTrace { interval_id: "r".into(), tags: Default::default(), snapshot: snapshot(), records }
}

fn random_times(rng: &mut ChaCha8Rng, n: usize) -> Vec<u64> {
    let hold = rng.gen_range(0.0..0.95);
    let mut t = rng.gen_range(0..50u64);
    (0..n)
        .map(|_| {
            if !rng.gen_bool(hold) {
                t += rng.gen_range(1..6);
            }
            t
        })
        .collect()
}

fn run(times: &[u64], l_min: usize, time_begin: u64) -> (IntervalTrace, SliceOutput) {
    let t = trace_from(times);
    let cfg = SlicerConfig { l_min, emit_residual: true, time_begin };
    let out = slice_interval(&t, &cfg, &mut FixedSnapshot(snapshot())).unwrap();
    (t, out)
}

fn check_invariants(times: &[u64], l_min: usize, time_begin: u64) {
    let (t, out) = run(times, l_min, time_begin);
    let mut rebuilt: Vec<CommittedRecord> = Vec::new();
    let mut last_boundary = None;
    for c in &out.clips {
        assert!(c.len() >= l_min);
        assert!(c.time > 0);
        assert_eq!(c.start_idx, rebuilt.len());
        rebuilt.extend(c.records.iter().cloned());
        last_boundary = Some(c.records.last().unwrap().commit);
    }
    if let Some(r) = &out.residual {
        rebuilt.extend(r.records.iter().cloned());
    }
    assert_eq!(rebuilt, t.records);
    let sum: u64 = out.clips.iter().map(|c| c.time).sum();
    assert_eq!(sum, last_boundary.map_or(0, |b| b - time_begin));
}

#[test]
fn matches_oracle_on_random_intervals() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..300 {
        let n = rng.gen_range(2..=3000);
        let l_min = [1, 2, 10, 100][case % 4];
        let times = random_times(&mut rng, n);
        let (_, out) = run(&times, l_min, 0);
        let (expect, residual) = oracle(&times, l_min, 0);
        assert_eq!(out.clips.len(), expect.len());
        for (c, (idx, time)) in out.clips.iter().zip(&expect) {
            assert_eq!(c.start_idx, idx[0]);
            assert_eq!(c.len(), idx.len());
            assert_eq!(c.time, *time);
        }
        assert_eq!(out.residual.map_or(0, |r| r.records.len()), residual.len());
    }
}

#[test]
fn long_interval_clip_count_is_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let times = random_times(&mut rng, 50_000);
    let (_, out) = run(&times, 100, 0);
    assert!(out.clips.len() <= 500);
}

proptest! {
    #[test]
    fn partition_length_positivity_label_sum(
        steps in prop::collection::vec(0u64..4, 2..400),
        l_min in 1usize..20,
        begin in 0u64..3,
    ) {
        let mut t = begin;
        let times: Vec<u64> = steps.iter().map(|s| { t += s; t }).collect();
        check_invariants(&times, l_min, begin);
    }

    #[test]
    fn duplicate_commit_time_keeps_labels(
        steps in prop::collection::vec(0u64..4, 4..300),
        l_min in 1usize..8,
        at in any::<prop::sample::Index>(),
    ) {
        let mut t = 0;
        let times: Vec<u64> = steps.iter().map(|s| { t += s; t }).collect();
        let (_, base) = run(&times, l_min, 0);
        // insert inside a clip, after it already holds l_min records
        let spots: Vec<usize> = base
            .clips
            .iter()
            .flat_map(|c| c.start_idx + l_min..=c.start_idx + c.len() - 1)
            .filter(|&p| p >= 1)
            .collect();
        prop_assume!(!spots.is_empty());
        let pos = spots[at.index(spots.len())];
        let mut stretched = times.clone();
        stretched.insert(pos, times[pos - 1]);
        let (_, after) = run(&stretched, l_min, 0);
        let labels = |o: &SliceOutput| o.clips.iter().map(|c| c.time).collect::<Vec<_>>();
        prop_assert_eq!(labels(&base), labels(&after));
    }
}
