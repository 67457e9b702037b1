use capsim_core::microsim::{generate_program, simulate, Replayer, SimBudget, UArchParams, WorkloadSpec};
use capsim_core::sampler::{group_classes, group_keys, sample, SamplerConfig};
use capsim_core::slicer::{slice_interval, SlicerConfig};
use capsim_core::tokenizer::{standardize_tokens, Token};
use capsim_core::trace::{CodeTraceClip, Tag};
use proptest::prelude::*;
use std::collections::BTreeMap;

fn corpus() -> Vec<CodeTraceClip> {
    let p = generate_program(&WorkloadSpec::new(&[Tag::Ctrl, Tag::Mem], 150, 77)).unwrap();
    let run = simulate(&p, &UArchParams::default(), SimBudget { warmup: 0, interval: 120_000 }).unwrap();
    let cfg = SlicerConfig { l_min: 10, ..SlicerConfig::default() };
    slice_interval(&run.trace, &cfg, &mut Replayer::new(&p, 0)).unwrap().clips
}

#[test]
fn grouping_matches_token_equality_oracle() {
    let clips: Vec<CodeTraceClip> = corpus().into_iter().take(10_000).collect();
    assert!(clips.len() >= 5_000, "only {} clips", clips.len());
    let mut reps: Vec<Vec<Vec<Token>>> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for c in &clips {
        let seq: Vec<Vec<Token>> = c.records.iter().map(|r| standardize_tokens(&r.inst)).collect();
        match reps.iter().position(|r| *r == seq) {
            Some(i) => counts[i] += 1,
            None => {
                reps.push(seq);
                counts.push(1);
            }
        }
    }
    let classes = group_classes(&clips);
    assert_eq!(classes.iter().map(|c| c.count()).collect::<Vec<_>>(), counts);
}

#[test]
fn constants_do_not_split_classes() {
    use capsim_core::microsim::MiniOp;
    let a = MiniOp::Addi { rd: 3, ra: 4, imm: 1 }.to_instruction(0x100);
    let b = MiniOp::Addi { rd: 3, ra: 4, imm: -77 }.to_instruction(0x200);
    let ka = capsim_core::tokenizer::content_key([&a]);
    let kb = capsim_core::tokenizer::content_key([&b]);
    assert_eq!(group_keys(&[ka, kb]).len(), 1);
}

fn build(counts: &[usize]) -> Vec<u64> {
    let mut keys = Vec::new();
    let total: usize = counts.iter().sum();
    let mut left = counts.to_vec();
    // deterministic interleave
    let mut k = 0;
    while keys.len() < total {
        if left[k] > 0 {
            keys.push(k as u64);
            left[k] -= 1;
        }
        k = (k * 7 + 3) % counts.len();
        if left.iter().all(|&n| n == 0) {
            break;
        }
        if left[k] == 0 {
            k = left.iter().position(|&n| n > 0).unwrap_or(0);
        }
    }
    keys
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn above_threshold_proportions_and_counts(
        counts in prop::collection::vec(1usize..3000, 1..12),
        threshold in 1usize..400,
        coefficient in 0.005f64..1.0,
    ) {
        let keys = build(&counts);
        let classes = group_keys(&keys);
        let cfg = SamplerConfig { threshold, coefficient, seed: 0 };
        let out = sample(&classes, &cfg).unwrap();
        let mut kept: BTreeMap<u64, usize> = BTreeMap::new();
        for &i in &out.selected {
            *kept.entry(keys[i]).or_default() += 1;
        }
        let above: Vec<_> = classes.iter().filter(|c| c.count() > threshold).collect();
        let total_before: f64 = above.iter().map(|c| c.count() as f64).sum();
        let total_after: f64 = above.iter().map(|c| kept[&c.content_key] as f64).sum();
        for c in &above {
            let after = kept.get(&c.content_key).copied().unwrap_or(0);
            prop_assert!(after >= 1);
            prop_assert!((after as f64 - c.count() as f64 * coefficient).abs() <= 1.0);
            if c.count() as f64 * coefficient >= 10.0 {
                let p0 = c.count() as f64 / total_before;
                let p1 = after as f64 / total_after;
                prop_assert!((p1 - p0).abs() / p0 <= 0.10);
            }
        }
        for c in classes.iter().filter(|c| c.count() <= threshold) {
            let after = kept.get(&c.content_key).copied().unwrap_or(0);
            prop_assert!(after == 0 || after == c.count());
        }
        prop_assert!(out.selected.len() <= keys.len());
        prop_assert!(out.selected.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(out.report.after, out.selected.len());
        let again = sample(&classes, &cfg).unwrap();
        prop_assert_eq!(again.selected, out.selected);
    }

    #[test]
    fn unit_coefficient_keeps_everything(counts in prop::collection::vec(1usize..500, 1..10), threshold in 1usize..300) {
        let keys = build(&counts);
        let out = sample(&group_keys(&keys), &SamplerConfig { threshold, coefficient: 1.0, seed: 9 }).unwrap();
        prop_assert_eq!(out.selected, (0..keys.len()).collect::<Vec<_>>());
    }

    #[test]
    fn reduction_when_coefficient_small(counts in prop::collection::vec(1usize..500, 2..10)) {
        let keys = build(&counts);
        let out = sample(&group_keys(&keys), &SamplerConfig { threshold: 1, coefficient: 0.3, seed: 0 }).unwrap();
        prop_assert!(out.selected.len() < keys.len());
    }
}
