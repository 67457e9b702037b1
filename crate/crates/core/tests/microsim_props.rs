use capsim_core::microsim::{
    generate_program, mix_contract, simulate, snapshot_at, BranchIf, MiniOp, MixFractions, Program, Replayer,
    SimBudget, StridePattern, UArchParams, WorkloadSpec, BASE_PC,
};
use capsim_core::slicer::SnapshotSource;
use capsim_core::trace::{write_interval, Mnemonic, Reg, RegClass, RegisterSnapshot, Tag};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

/// Straightforward re-execution of the mini-ISA, independent of the
/// library's interpreter.
struct Oracle {
    r: Vec<u64>,
    v: Vec<(u64, u64)>,
    cr: [bool; 32],
    lr: u64,
    ctr: u64,
    pc: u64,
    last: u64,
    mem: HashMap<u64, u64>,
    seed: u64,
}

fn mix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl Oracle {
    fn new(p: &Program) -> Oracle {
        let g = |r: Reg| p.init.get(r).unwrap();
        let crv = g(Reg::single(RegClass::Cr)) as u32;
        let mut cr = [false; 32];
        for (b, c) in cr.iter_mut().enumerate() {
            *c = crv & (1 << (31 - b)) != 0;
        }
        Oracle {
            r: (0..32).map(|i| g(Reg::gpr(i)) as u64).collect(),
            v: (0..64).map(|i| { let x = g(Reg::vsr(i)); ((x >> 64) as u64, x as u64) }).collect(),
            cr,
            lr: g(Reg::single(RegClass::Lr)) as u64,
            ctr: g(Reg::single(RegClass::Ctr)) as u64,
            pc: g(Reg::single(RegClass::Nia)) as u64,
            last: g(Reg::single(RegClass::Cia)) as u64,
            mem: HashMap::new(),
            seed: p.mem_seed,
        }
    }

    fn run(&mut self, p: &Program, steps: u64) -> u64 {
        let mut done = 0;
        while done < steps {
            let i = ((self.pc - BASE_PC) / 4) as usize;
            if i >= p.code.len() {
                break;
            }
            self.last = self.pc;
            self.pc += 4;
            let s64 = |x: i16| x as i64 as u64;
            match p.code[i] {
                MiniOp::Addi { rd, ra, imm } => self.r[rd as usize] = self.r[ra as usize].wrapping_add(s64(imm)),
                MiniOp::Add { rd, ra, rb } => self.r[rd as usize] = self.r[ra as usize].wrapping_add(self.r[rb as usize]),
                MiniOp::Mul { rd, ra, rb } => self.r[rd as usize] = self.r[ra as usize].wrapping_mul(self.r[rb as usize]),
                MiniOp::Divd { rd, ra, rb } => {
                    let (a, b) = (self.r[ra as usize] as i64, self.r[rb as usize] as i64);
                    self.r[rd as usize] = if b == 0 || (a == i64::MIN && b == -1) { 0 } else { (a / b) as u64 };
                }
                MiniOp::Ld { rd, ra, disp } => {
                    let ea = (self.r[ra as usize].wrapping_add(s64(disp))) / 8 * 8;
                    self.r[rd as usize] = *self.mem.get(&ea).unwrap_or(&mix(ea ^ self.seed));
                }
                MiniOp::Std { rs, ra, disp } => {
                    let ea = (self.r[ra as usize].wrapping_add(s64(disp))) / 8 * 8;
                    self.mem.insert(ea, self.r[rs as usize]);
                }
                MiniOp::Cmpi { crf, ra, imm } => {
                    let a = self.r[ra as usize] as i64;
                    let b = crf as usize * 4;
                    self.cr[b] = a < imm as i64;
                    self.cr[b + 1] = a > imm as i64;
                    self.cr[b + 2] = a == imm as i64;
                    self.cr[b + 3] = false;
                }
                MiniOp::B { target } => self.pc = BASE_PC + 4 * target as u64,
                MiniOp::Bc { cond, bi, target } => {
                    let want = matches!(cond, BranchIf::True);
                    if self.cr[bi as usize] == want {
                        self.pc = BASE_PC + 4 * target as u64;
                    }
                }
                MiniOp::Mtctr { rs } => self.ctr = self.r[rs as usize],
                MiniOp::Mflr { rd } => self.r[rd as usize] = self.lr,
                MiniOp::Fadd { fd, fa, fb } => {
                    let x = f64::from_bits(self.v[fa as usize].0) + f64::from_bits(self.v[fb as usize].0);
                    self.v[fd as usize] = (x.to_bits(), 0);
                }
                MiniOp::Fmul { fd, fa, fb } => {
                    let x = f64::from_bits(self.v[fa as usize].0) * f64::from_bits(self.v[fb as usize].0);
                    self.v[fd as usize] = (x.to_bits(), 0);
                }
            }
            done += 1;
        }
        done
    }

    fn agrees(&self, s: &RegisterSnapshot) -> bool {
        let g = |r: Reg| s.get(r).unwrap();
        let crv: u32 = self.cr.iter().enumerate().map(|(b, &c)| (c as u32) << (31 - b)).sum();
        (0..32).all(|i| g(Reg::gpr(i)) as u64 == self.r[i as usize])
            && (0..64).all(|i| g(Reg::vsr(i)) == ((self.v[i as usize].0 as u128) << 64 | self.v[i as usize].1 as u128))
            && g(Reg::single(RegClass::Cr)) as u32 == crv
            && g(Reg::single(RegClass::Lr)) as u64 == self.lr
            && g(Reg::single(RegClass::Ctr)) as u64 == self.ctr
            && g(Reg::single(RegClass::Cia)) as u64 == self.last
            && g(Reg::single(RegClass::Nia)) as u64 == self.pc
    }
}

const KINDS: [&[Tag]; 6] = [
    &[Tag::Ctrl],
    &[Tag::Comp],
    &[Tag::Mem],
    &[Tag::Comp, Tag::Mem],
    &[Tag::Ctrl, Tag::Mem],
    &[Tag::Ctrl, Tag::Comp],
];

fn random_program(rng: &mut ChaCha8Rng) -> Program {
    let kind = KINDS[rng.gen_range(0..KINDS.len())];
    let mut spec = WorkloadSpec::new(kind, rng.gen_range(20..400), rng.gen());
    spec.loop_depth = rng.gen_range(0..=3);
    spec.stride_pattern = [StridePattern::Unit, StridePattern::Line, StridePattern::Chase][rng.gen_range(0..3)];
    generate_program(&spec).unwrap()
}

#[test]
fn comp_example_alu_fraction() {
    let p = generate_program(&WorkloadSpec::new(&[Tag::Comp], 1000, 7)).unwrap();
    let m: Vec<Mnemonic> = p.code.iter().map(|o| o.mnemonic()).collect();
    assert!(MixFractions::of(&m).compute >= 0.6);
}

#[test]
fn static_mix_contract_holds() {
    for kind in KINDS {
        for seed in 0..40 {
            let spec = WorkloadSpec::new(kind, 1000, seed);
            let p = generate_program(&spec).unwrap();
            assert_eq!(p.code.len(), 1000);
            let m: Vec<Mnemonic> = p.code.iter().map(|o| o.mnemonic()).collect();
            let got = MixFractions::of(&m);
            assert!(got.satisfies(&mix_contract(&spec.kind)), "{kind:?} seed {seed}: {got:?}");
        }
    }
}

#[test]
fn dynamic_mix_contract_holds_for_single_kinds() {
    for kind in &KINDS[..3] {
        for seed in 0..5 {
            let spec = WorkloadSpec::new(kind, 1000, seed);
            let p = generate_program(&spec).unwrap();
            let run = simulate(&p, &UArchParams::default(), SimBudget { warmup: 1000, interval: 20_000 }).unwrap();
            let m: Vec<Mnemonic> = run.trace.records.iter().map(|r| r.inst.mnemonic).collect();
            let got = MixFractions::of(&m);
            assert!(got.satisfies(&mix_contract(&spec.kind)), "{kind:?} seed {seed}: {got:?}");
        }
    }
}

#[test]
fn resources_are_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let budget = SimBudget { warmup: 0, interval: 3000 };
    for _ in 0..120 {
        let p = random_program(&mut rng);
        let mut base = UArchParams::default();
        base.fetch_width = rng.gen_range(1..=6);
        base.issue_width = rng.gen_range(1..=6);
        base.commit_width = rng.gen_range(1..=6);
        base.rob_entries = rng.gen_range(base.commit_width..=48);
        let t0 = simulate(&p, &base, budget).unwrap().total_cycles;
        let grow = rng.gen_range(1..=4);
        let variants = [
            UArchParams { fetch_width: base.fetch_width + grow, ..base.clone() },
            UArchParams { issue_width: base.issue_width + grow, ..base.clone() },
            UArchParams { commit_width: base.commit_width + grow, rob_entries: base.rob_entries + grow, ..base.clone() },
            UArchParams { rob_entries: base.rob_entries + grow, ..base.clone() },
        ];
        for v in variants {
            let t1 = simulate(&p, &v, budget).unwrap().total_cycles;
            assert!(t1 <= t0, "{t1} > {t0} for {v:?}");
        }
    }
}

#[test]
fn commit_width_alone_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let p = random_program(&mut rng);
        let mut prev = u64::MAX;
        for w in 1..=8 {
            let t = simulate(&p, &UArchParams { commit_width: w, ..UArchParams::default() }, SimBudget { warmup: 0, interval: 2000 })
                .unwrap()
                .total_cycles;
            assert!(t <= prev);
            prev = t;
        }
    }
}

#[test]
fn throughput_lower_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let p = random_program(&mut rng);
        let params = UArchParams { commit_width: rng.gen_range(1..=8), ..UArchParams::default() };
        let r = simulate(&p, &params, SimBudget { warmup: 0, interval: 2000 }).unwrap();
        assert!(r.total_cycles >= r.committed.div_ceil(params.commit_width as u64));
        assert!(r.trace.records.windows(2).all(|w| w[0].commit <= w[1].commit));
        // per-cycle commit bandwidth
        let mut per_cycle: HashMap<u64, u32> = HashMap::new();
        for rec in &r.trace.records {
            *per_cycle.entry(rec.commit).or_default() += 1;
        }
        assert!(per_cycle.values().all(|&n| n <= params.commit_width));
    }
}

#[test]
fn simulation_is_byte_deterministic() {
    let p = generate_program(&WorkloadSpec::new(&[Tag::Ctrl, Tag::Mem], 300, 5)).unwrap();
    let render = || {
        let mut run = simulate(&p, &UArchParams::default(), SimBudget { warmup: 500, interval: 5000 }).unwrap();
        run.trace.interval_id = "x".into();
        let mut buf = Vec::new();
        write_interval(&run.trace, &mut buf).unwrap();
        buf
    };
    assert_eq!(render(), render());
}

#[test]
fn final_state_matches_oracle_interpreter() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..40 {
        let p = random_program(&mut rng);
        let run = simulate(&p, &UArchParams::default(), SimBudget { warmup: 300, interval: 4000 }).unwrap();
        let mut o = Oracle::new(&p);
        assert_eq!(o.run(&p, run.committed), run.committed);
        assert!(o.agrees(&run.final_snapshot));
    }
}

#[test]
fn snapshot_at_matches_oracle() {
    for (i, kind) in KINDS.iter().enumerate() {
        let p = generate_program(&WorkloadSpec::new(kind, 500, 100 + i as u64)).unwrap();
        let mut o = Oracle::new(&p);
        o.run(&p, 1000);
        assert!(o.agrees(&snapshot_at(&p, 1000).unwrap()));
    }
}

#[test]
fn warmup_rebases_a_continuous_run() {
    let p = generate_program(&WorkloadSpec::new(&[Tag::Comp, Tag::Mem], 400, 21)).unwrap();
    let params = UArchParams::default();
    let full = simulate(&p, &params, SimBudget { warmup: 0, interval: 6000 }).unwrap();
    let warm = simulate(&p, &params, SimBudget { warmup: 1000, interval: 5000 }).unwrap();
    assert_eq!(warm.trace.snapshot, snapshot_at(&p, 1000).unwrap());
    assert_eq!(warm.warmup_end_cycle, full.trace.records[999].commit);
    for (a, b) in warm.trace.records.iter().zip(&full.trace.records[1000..]) {
        assert_eq!(a.inst, b.inst);
        assert_eq!(a.commit + warm.warmup_end_cycle, b.commit);
    }
    assert!(warm.truncated);
}

#[test]
fn replayer_serves_interval_snapshots() {
    let p = generate_program(&WorkloadSpec::new(&[Tag::Ctrl], 200, 3)).unwrap();
    let mut rep = Replayer::new(&p, 50);
    for idx in [0usize, 7, 7, 300, 1200] {
        assert_eq!(rep.snapshot_before(idx).unwrap(), snapshot_at(&p, 50 + idx as u64).unwrap());
    }
    assert!(rep.snapshot_before(3).is_err());
}

#[test]
fn halting_program_is_not_truncated() {
    let mut spec = WorkloadSpec::new(&[Tag::Comp], 60, 1);
    spec.repeat = false;
    spec.loop_depth = 0;
    let p = generate_program(&spec).unwrap();
    let r = simulate(&p, &UArchParams::default(), SimBudget { warmup: 0, interval: 10_000 }).unwrap();
    assert!(!r.truncated);
    assert!(r.committed <= 60);
    assert!(simulate(&p, &UArchParams::default(), SimBudget { warmup: 100, interval: 10 }).is_err());
}
