//! Mini-ISA program generator, functional interpreter and cycle-level timing
//! oracle producing ground-truth interval traces.
//!
//! The timing model is a scoreboarded in-order-issue, out-of-order-complete
//! pipeline. Every per-instruction timestamp is a max over earlier timestamps
//! plus constants, so the schedule is the least solution of a monotone
//! system: widening a stage or enlarging the ROB can only relax constraints.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::slicer::{SliceError, SnapshotSource};
use crate::trace::{
    CommittedRecord, Instruction, IntervalTrace, MemAccess, MemKind, Mnemonic, Operand, Reg, RegClass,
    RegisterSnapshot, Tag, TagSet,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid workload spec: {0}")]
    Spec(String),
    #[error("invalid micro-architecture parameters: {0}")]
    Params(String),
    #[error("invalid program: {0}")]
    Program(String),
    #[error("instruction index {k} beyond the {committed} instructions the program commits")]
    Index { k: u64, committed: u64 },
    #[error("program halted during warm-up ({committed} instructions), interval is empty")]
    EmptyInterval { committed: u64 },
}

pub type Result<T> = std::result::Result<T, SimError>;

pub const BASE_PC: u64 = 0x1000_0000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UArchParams {
    pub fetch_width: u32,
    pub issue_width: u32,
    pub commit_width: u32,
    pub rob_entries: u32,
    pub latency: BTreeMap<Mnemonic, u32>,
    pub cache_lines: u32,
    pub cache_line_bytes: u32,
    pub miss_penalty: u32,
    pub mispredict_penalty: u32,
}

impl Default for UArchParams {
    /// Baseline: widths 8/8/8, ROB 192, textbook latencies.
    fn default() -> Self {
        let latency = [
            (Mnemonic::Addi, 1),
            (Mnemonic::Add, 1),
            (Mnemonic::Mul, 3),
            (Mnemonic::Divd, 12),
            (Mnemonic::Ld, 2),
            (Mnemonic::Std, 1),
            (Mnemonic::Cmpi, 1),
            (Mnemonic::B, 1),
            (Mnemonic::Bc, 1),
            (Mnemonic::Mtctr, 1),
            (Mnemonic::Mflr, 1),
            (Mnemonic::Fadd, 4),
            (Mnemonic::Fmul, 5),
        ]
        .into_iter()
        .collect();
        UArchParams {
            fetch_width: 8,
            issue_width: 8,
            commit_width: 8,
            rob_entries: 192,
            latency,
            cache_lines: 256,
            cache_line_bytes: 64,
            miss_penalty: 20,
            mispredict_penalty: 8,
        }
    }
}

impl UArchParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::Params(m));
        if self.fetch_width == 0 || self.issue_width == 0 || self.commit_width == 0 {
            return bad("widths must be at least 1".into());
        }
        if self.rob_entries < self.commit_width {
            return bad(format!("rob_entries {} < commit_width {}", self.rob_entries, self.commit_width));
        }
        if self.cache_lines == 0 || !self.cache_line_bytes.is_power_of_two() {
            return bad("cache needs >= 1 line and a power-of-two line size".into());
        }
        for m in Mnemonic::ALL {
            match self.latency.get(&m) {
                Some(l) if *l >= 1 => {}
                _ => return bad(format!("latency for '{m}' missing or zero")),
            }
        }
        Ok(())
    }

    fn latency_of(&self, m: Mnemonic) -> u64 {
        self.latency[&m] as u64
    }
}

/// Branch condition encoded in the BO field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchIf {
    /// BO = 12: branch if the CR bit is set.
    True,
    /// BO = 4: branch if the CR bit is clear.
    False,
}

impl BranchIf {
    fn bo(self) -> u8 {
        match self {
            BranchIf::True => 12,
            BranchIf::False => 4,
        }
    }
}

/// Decoded mini-ISA instruction with concrete immediates. Targets are
/// instruction indices within the program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum MiniOp {
    Addi { rd: u8, ra: u8, imm: i16 },
    Add { rd: u8, ra: u8, rb: u8 },
    Mul { rd: u8, ra: u8, rb: u8 },
    Divd { rd: u8, ra: u8, rb: u8 },
    Ld { rd: u8, ra: u8, disp: i16 },
    Std { rs: u8, ra: u8, disp: i16 },
    Cmpi { crf: u8, ra: u8, imm: i16 },
    B { target: usize },
    Bc { cond: BranchIf, bi: u8, target: usize },
    Mtctr { rs: u8 },
    Mflr { rd: u8 },
    Fadd { fd: u8, fa: u8, fb: u8 },
    Fmul { fd: u8, fa: u8, fb: u8 },
}

impl MiniOp {
    pub fn mnemonic(&self) -> Mnemonic {
        match self {
            MiniOp::Addi { .. } => Mnemonic::Addi,
            MiniOp::Add { .. } => Mnemonic::Add,
            MiniOp::Mul { .. } => Mnemonic::Mul,
            MiniOp::Divd { .. } => Mnemonic::Divd,
            MiniOp::Ld { .. } => Mnemonic::Ld,
            MiniOp::Std { .. } => Mnemonic::Std,
            MiniOp::Cmpi { .. } => Mnemonic::Cmpi,
            MiniOp::B { .. } => Mnemonic::B,
            MiniOp::Bc { .. } => Mnemonic::Bc,
            MiniOp::Mtctr { .. } => Mnemonic::Mtctr,
            MiniOp::Mflr { .. } => Mnemonic::Mflr,
            MiniOp::Fadd { .. } => Mnemonic::Fadd,
            MiniOp::Fmul { .. } => Mnemonic::Fmul,
        }
    }

    fn validate(&self, len: usize) -> std::result::Result<(), String> {
        let gpr = |r: u8| if r < 32 { Ok(()) } else { Err(format!("GPR index {r}")) };
        let vsr = |r: u8| if r < 64 { Ok(()) } else { Err(format!("VSR index {r}")) };
        let target = |t: usize| if t < len { Ok(()) } else { Err(format!("branch target {t} outside program of {len}")) };
        match *self {
            MiniOp::Addi { rd, ra, .. } | MiniOp::Ld { rd, ra, .. } => gpr(rd).and(gpr(ra)),
            MiniOp::Add { rd, ra, rb } | MiniOp::Mul { rd, ra, rb } | MiniOp::Divd { rd, ra, rb } => {
                gpr(rd).and(gpr(ra)).and(gpr(rb))
            }
            MiniOp::Std { rs, ra, .. } => gpr(rs).and(gpr(ra)),
            MiniOp::Cmpi { crf, ra, .. } => {
                if crf >= 8 {
                    return Err(format!("CR field {crf}"));
                }
                gpr(ra)
            }
            MiniOp::B { target: t } => target(t),
            MiniOp::Bc { bi, target: t, .. } => {
                if bi >= 32 {
                    return Err(format!("CR bit {bi}"));
                }
                target(t)
            }
            MiniOp::Mtctr { rs } => gpr(rs),
            MiniOp::Mflr { rd } => gpr(rd),
            MiniOp::Fadd { fd, fa, fb } | MiniOp::Fmul { fd, fa, fb } => vsr(fd).and(vsr(fa)).and(vsr(fb)),
        }
    }

    /// Symbolic form with explicit operands only; implicit registers are
    /// left to standardization.
    pub fn to_instruction(&self, pc: u64) -> Instruction {
        let g = |r: u8| Operand::Reg(Reg::gpr(r));
        let v = |r: u8| Operand::Reg(Reg::vsr(r));
        let target_pc = |t: usize| BASE_PC + 4 * t as u64;
        let mem = |kind, ra: u8| Some(MemAccess { kind, base: Reg::gpr(ra), offset_present: true });
        let (dsts, srcs, mem, raw) = match *self {
            MiniOp::Addi { rd, ra, imm } => (vec![g(rd)], vec![g(ra), Operand::Const], None, format!("addi r{rd}, r{ra}, {imm}")),
            MiniOp::Add { rd, ra, rb } => (vec![g(rd)], vec![g(ra), g(rb)], None, format!("add r{rd}, r{ra}, r{rb}")),
            MiniOp::Mul { rd, ra, rb } => (vec![g(rd)], vec![g(ra), g(rb)], None, format!("mul r{rd}, r{ra}, r{rb}")),
            MiniOp::Divd { rd, ra, rb } => (vec![g(rd)], vec![g(ra), g(rb)], None, format!("divd r{rd}, r{ra}, r{rb}")),
            MiniOp::Ld { rd, ra, disp } => (vec![g(rd)], vec![], mem(MemKind::Load, ra), format!("ld r{rd}, {disp}(r{ra})")),
            MiniOp::Std { rs, ra, disp } => (vec![], vec![g(rs)], mem(MemKind::Store, ra), format!("std r{rs}, {disp}(r{ra})")),
            MiniOp::Cmpi { crf, ra, imm } => (vec![], vec![g(ra), Operand::Const], None, format!("cmpi cr{crf}, r{ra}, {imm}")),
            MiniOp::B { target } => (vec![], vec![], None, format!("b 0x{:x}", target_pc(target))),
            MiniOp::Bc { cond, bi, target } => {
                (vec![], vec![], None, format!("bc {}, {bi}, 0x{:x}", cond.bo(), target_pc(target)))
            }
            MiniOp::Mtctr { rs } => (vec![], vec![g(rs)], None, format!("mtctr r{rs}")),
            MiniOp::Mflr { rd } => (vec![g(rd)], vec![], None, format!("mflr r{rd}")),
            MiniOp::Fadd { fd, fa, fb } => (vec![v(fd)], vec![v(fa), v(fb)], None, format!("fadd vs{fd}, vs{fa}, vs{fb}")),
            MiniOp::Fmul { fd, fa, fb } => (vec![v(fd)], vec![v(fa), v(fb)], None, format!("fmul vs{fd}, vs{fa}, vs{fb}")),
        };
        Instruction { pc, mnemonic: self.mnemonic(), dsts, srcs, mem, raw }
    }
}

/// Registers a mini-op reads and writes, including implicit ones. Used by
/// the scoreboard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Loc {
    Gpr(u8),
    Vsr(u8),
    Cr,
    Lr,
    Ctr,
}

fn reads(op: &MiniOp) -> ([Option<Loc>; 2], bool) {
    // second flag: reads memory
    use Loc::*;
    match *op {
        MiniOp::Addi { ra, .. } | MiniOp::Cmpi { ra, .. } => ([Some(Gpr(ra)), None], false),
        MiniOp::Add { ra, rb, .. } | MiniOp::Mul { ra, rb, .. } | MiniOp::Divd { ra, rb, .. } => {
            ([Some(Gpr(ra)), Some(Gpr(rb))], false)
        }
        MiniOp::Ld { ra, .. } => ([Some(Gpr(ra)), None], true),
        MiniOp::Std { rs, ra, .. } => ([Some(Gpr(rs)), Some(Gpr(ra))], false),
        MiniOp::B { .. } => ([None, None], false),
        MiniOp::Bc { .. } => ([Some(Cr), None], false),
        MiniOp::Mtctr { rs } => ([Some(Gpr(rs)), None], false),
        MiniOp::Mflr { .. } => ([Some(Lr), None], false),
        MiniOp::Fadd { fa, fb, .. } | MiniOp::Fmul { fa, fb, .. } => ([Some(Vsr(fa)), Some(Vsr(fb))], false),
    }
}

fn writes(op: &MiniOp) -> Option<Loc> {
    use Loc::*;
    match *op {
        MiniOp::Addi { rd, .. }
        | MiniOp::Add { rd, .. }
        | MiniOp::Mul { rd, .. }
        | MiniOp::Divd { rd, .. }
        | MiniOp::Ld { rd, .. }
        | MiniOp::Mflr { rd } => Some(Gpr(rd)),
        MiniOp::Cmpi { .. } => Some(Cr),
        MiniOp::Mtctr { .. } => Some(Ctr),
        MiniOp::Fadd { fd, .. } | MiniOp::Fmul { fd, .. } => Some(Vsr(fd)),
        MiniOp::Std { .. } | MiniOp::B { .. } | MiniOp::Bc { .. } => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub tags: TagSet,
    pub code: Vec<MiniOp>,
    pub init: RegisterSnapshot,
    /// Seeds the contents of never-written memory.
    pub mem_seed: u64,
}

impl Program {
    pub fn validate(&self) -> Result<()> {
        if self.code.is_empty() {
            return Err(SimError::Program("empty program".into()));
        }
        for (i, op) in self.code.iter().enumerate() {
            op.validate(self.code.len()).map_err(|m| SimError::Program(format!("instruction {i}: {m}")))?;
        }
        if !self.init.is_complete() {
            return Err(SimError::Program("initial snapshot incomplete".into()));
        }
        Ok(())
    }

    pub fn pc_of(&self, idx: usize) -> u64 {
        BASE_PC + 4 * idx as u64
    }

    pub fn instructions(&self) -> Vec<Instruction> {
        self.code.iter().enumerate().map(|(i, op)| op.to_instruction(self.pc_of(i))).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("program serializes")
    }

    pub fn from_json(s: &str) -> Result<Program> {
        let p: Program = serde_json::from_str(s).map_err(|e| SimError::Program(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// What one functional step did, as seen by the timing model.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub idx: usize,
    pub ea: Option<u64>,
    pub taken: bool,
}

/// Sequential architectural interpreter.
#[derive(Debug, Clone)]
pub struct Machine<'p> {
    prog: &'p Program,
    next: usize,
    gpr: [u64; 32],
    vsr: [u128; 64],
    cr: u32,
    lr: u64,
    ctr: u64,
    xer: u64,
    fpscr: u32,
    vscr: u32,
    cia: u64,
    nia: u64,
    mem: HashMap<u64, u64>,
    committed: u64,
}

impl<'p> Machine<'p> {
    pub fn new(prog: &'p Program) -> Machine<'p> {
        let get = |r: Reg| prog.init.get(r).unwrap_or(0);
        let mut gpr = [0u64; 32];
        for (i, g) in gpr.iter_mut().enumerate() {
            *g = get(Reg::gpr(i as u8)) as u64;
        }
        let mut vsr = [0u128; 64];
        for (i, v) in vsr.iter_mut().enumerate() {
            *v = get(Reg::vsr(i as u8));
        }
        let nia = get(Reg::single(RegClass::Nia)) as u64;
        let next = nia.checked_sub(BASE_PC).map_or(prog.code.len(), |d| (d / 4) as usize);
        Machine {
            prog,
            next,
            gpr,
            vsr,
            cr: get(Reg::single(RegClass::Cr)) as u32,
            lr: get(Reg::single(RegClass::Lr)) as u64,
            ctr: get(Reg::single(RegClass::Ctr)) as u64,
            xer: get(Reg::single(RegClass::Xer)) as u64,
            fpscr: get(Reg::single(RegClass::Fpscr)) as u32,
            vscr: get(Reg::single(RegClass::Vscr)) as u32,
            cia: get(Reg::single(RegClass::Cia)) as u64,
            nia,
            mem: HashMap::new(),
            committed: 0,
        }
    }

    pub fn committed(&self) -> u64 {
        self.committed
    }

    pub fn halted(&self) -> bool {
        self.next >= self.prog.code.len()
    }

    fn load(&self, ea: u64) -> u64 {
        self.mem.get(&ea).copied().unwrap_or_else(|| splitmix64(ea ^ self.prog.mem_seed))
    }

    fn ea(&self, ra: u8, disp: i16) -> u64 {
        self.gpr[ra as usize].wrapping_add(disp as i64 as u64) & !7
    }

    /// Index of the instruction the next step will execute.
    pub fn next_index(&self) -> Option<usize> {
        (!self.halted()).then_some(self.next)
    }

    pub fn step(&mut self) -> Option<StepInfo> {
        if self.halted() {
            return None;
        }
        let idx = self.next;
        let op = self.prog.code[idx];
        let pc = self.prog.pc_of(idx);
        let mut next = idx + 1;
        let mut ea = None;
        let mut taken = false;
        let dw0 = |v: u128| f64::from_bits((v >> 64) as u64);
        let from_dw0 = |x: f64| (x.to_bits() as u128) << 64;
        match op {
            MiniOp::Addi { rd, ra, imm } => self.gpr[rd as usize] = self.gpr[ra as usize].wrapping_add(imm as i64 as u64),
            MiniOp::Add { rd, ra, rb } => {
                self.gpr[rd as usize] = self.gpr[ra as usize].wrapping_add(self.gpr[rb as usize])
            }
            MiniOp::Mul { rd, ra, rb } => {
                self.gpr[rd as usize] = self.gpr[ra as usize].wrapping_mul(self.gpr[rb as usize])
            }
            MiniOp::Divd { rd, ra, rb } => {
                let (a, b) = (self.gpr[ra as usize] as i64, self.gpr[rb as usize] as i64);
                self.gpr[rd as usize] = a.checked_div(b).unwrap_or(0) as u64;
            }
            MiniOp::Ld { rd, ra, disp } => {
                let a = self.ea(ra, disp);
                ea = Some(a);
                self.gpr[rd as usize] = self.load(a);
            }
            MiniOp::Std { rs, ra, disp } => {
                let a = self.ea(ra, disp);
                ea = Some(a);
                self.mem.insert(a, self.gpr[rs as usize]);
            }
            MiniOp::Cmpi { crf, ra, imm } => {
                let a = self.gpr[ra as usize] as i64;
                let b = imm as i64;
                let so = ((self.xer >> 31) & 1) as u32;
                let field = match a.cmp(&b) {
                    std::cmp::Ordering::Less => 0b1000,
                    std::cmp::Ordering::Greater => 0b0100,
                    std::cmp::Ordering::Equal => 0b0010,
                } | so;
                let shift = 28 - 4 * crf as u32;
                self.cr = (self.cr & !(0xf << shift)) | (field << shift);
            }
            MiniOp::B { target } => {
                next = target;
                taken = true;
            }
            MiniOp::Bc { cond, bi, target } => {
                let bit = (self.cr >> (31 - bi as u32)) & 1 == 1;
                if bit == (cond == BranchIf::True) {
                    next = target;
                    taken = true;
                }
            }
            MiniOp::Mtctr { rs } => self.ctr = self.gpr[rs as usize],
            MiniOp::Mflr { rd } => self.gpr[rd as usize] = self.lr,
            MiniOp::Fadd { fd, fa, fb } => {
                self.vsr[fd as usize] = from_dw0(dw0(self.vsr[fa as usize]) + dw0(self.vsr[fb as usize]))
            }
            MiniOp::Fmul { fd, fa, fb } => {
                self.vsr[fd as usize] = from_dw0(dw0(self.vsr[fa as usize]) * dw0(self.vsr[fb as usize]))
            }
        }
        self.cia = pc;
        self.nia = self.prog.pc_of(next);
        self.next = next;
        self.committed += 1;
        Some(StepInfo { idx, ea, taken })
    }

    pub fn snapshot(&self) -> RegisterSnapshot {
        let mut s = RegisterSnapshot::new();
        for (i, v) in self.gpr.iter().enumerate() {
            s.set(Reg::gpr(i as u8), *v as u128);
        }
        for (i, v) in self.vsr.iter().enumerate() {
            s.set(Reg::vsr(i as u8), *v);
        }
        s.set(Reg::single(RegClass::Cr), self.cr as u128);
        s.set(Reg::single(RegClass::Lr), self.lr as u128);
        s.set(Reg::single(RegClass::Ctr), self.ctr as u128);
        s.set(Reg::single(RegClass::Xer), self.xer as u128);
        s.set(Reg::single(RegClass::Fpscr), self.fpscr as u128);
        s.set(Reg::single(RegClass::Vscr), self.vscr as u128);
        s.set(Reg::single(RegClass::Cia), self.cia as u128);
        s.set(Reg::single(RegClass::Nia), self.nia as u128);
        s
    }
}

/// Architectural registers after the first `k` commits. Timing parameters
/// cannot influence architectural state, so none are taken.
pub fn snapshot_at(program: &Program, k: u64) -> Result<RegisterSnapshot> {
    program.validate()?;
    let mut m = Machine::new(program);
    while m.committed() < k {
        if m.step().is_none() {
            return Err(SimError::Index { k, committed: m.committed() });
        }
    }
    Ok(m.snapshot())
}

/// Incremental snapshot provider for the slicer: replays the program from
/// the start, skips `warmup` instructions, then serves snapshots at
/// non-decreasing interval offsets.
pub struct Replayer<'p> {
    machine: Machine<'p>,
    warmup: u64,
}

impl<'p> Replayer<'p> {
    pub fn new(program: &'p Program, warmup: u64) -> Replayer<'p> {
        Replayer { machine: Machine::new(program), warmup }
    }
}

impl SnapshotSource for Replayer<'_> {
    fn snapshot_before(&mut self, idx: usize) -> std::result::Result<RegisterSnapshot, SliceError> {
        let target = self.warmup + idx as u64;
        if self.machine.committed() > target {
            return Err(SliceError::Snapshot(format!(
                "replayer already past instruction {target} (at {})",
                self.machine.committed()
            )));
        }
        while self.machine.committed() < target {
            if self.machine.step().is_none() {
                return Err(SliceError::Snapshot(format!("program halted before instruction {target}")));
            }
        }
        Ok(self.machine.snapshot())
    }
}

/// Fixed-capacity history of the last few timestamps.
struct History {
    buf: Vec<u64>,
    len: u64,
}

impl History {
    fn new(cap: usize) -> History {
        History { buf: vec![0; cap], len: 0 }
    }

    fn push(&mut self, t: u64) {
        let cap = self.buf.len() as u64;
        self.buf[(self.len % cap) as usize] = t;
        self.len += 1;
    }

    /// Timestamp of the entry `back` positions before the next push.
    fn back(&self, back: u64) -> Option<u64> {
        if back == 0 || back > self.len || back > self.buf.len() as u64 {
            return None;
        }
        let cap = self.buf.len() as u64;
        Some(self.buf[((self.len - back) % cap) as usize])
    }
}

/// Stage constants: one decode/dispatch cycle after fetch, commit the cycle
/// after completion.
const DECODE_DELAY: u64 = 1;
const COMMIT_DELAY: u64 = 1;

/// Cycle-level scheduler fed one functional step at a time, in program order.
pub struct TimingModel<'a> {
    params: &'a UArchParams,
    fetch: History,
    issue: History,
    commit: History,
    last_fetch: u64,
    last_issue: u64,
    last_commit: u64,
    redirect: u64,
    ready: HashMap<Loc, u64>,
    store_ready: HashMap<u64, u64>,
    cache: Vec<u64>,
}

impl<'a> TimingModel<'a> {
    pub fn new(params: &'a UArchParams) -> TimingModel<'a> {
        let cap = [params.fetch_width, params.issue_width, params.commit_width, params.rob_entries]
            .into_iter()
            .max()
            .unwrap() as usize
            + 1;
        TimingModel {
            params,
            fetch: History::new(cap),
            issue: History::new(cap),
            commit: History::new(cap),
            last_fetch: 0,
            last_issue: 0,
            last_commit: 0,
            redirect: 0,
            ready: HashMap::new(),
            store_ready: HashMap::new(),
            cache: vec![u64::MAX; params.cache_lines as usize],
        }
    }

    fn access_cache(&mut self, ea: u64) -> bool {
        let line = ea / self.params.cache_line_bytes as u64;
        let set = (line % self.params.cache_lines as u64) as usize;
        let hit = self.cache[set] == line;
        self.cache[set] = line;
        hit
    }

    /// Schedules one committed instruction and returns its commit cycle.
    pub fn schedule(&mut self, op: &MiniOp, step: &StepInfo) -> u64 {
        let p = self.params;
        let mut fetch = self.last_fetch.max(self.redirect);
        if let Some(t) = self.fetch.back(p.fetch_width as u64) {
            fetch = fetch.max(t + 1);
        }
        if let Some(t) = self.commit.back(p.rob_entries as u64) {
            fetch = fetch.max(t);
        }

        let mut issue = (fetch + DECODE_DELAY).max(self.last_issue);
        if let Some(t) = self.issue.back(p.issue_width as u64) {
            issue = issue.max(t + 1);
        }
        let (srcs, reads_mem) = reads(op);
        for loc in srcs.iter().flatten() {
            if let Some(t) = self.ready.get(loc) {
                issue = issue.max(*t);
            }
        }
        if reads_mem {
            if let Some(t) = step.ea.and_then(|a| self.store_ready.get(&a)) {
                issue = issue.max(*t);
            }
        }

        let mnemonic = op.mnemonic();
        let mut latency = p.latency_of(mnemonic);
        if let Some(ea) = step.ea {
            let hit = self.access_cache(ea);
            if mnemonic == Mnemonic::Ld && !hit {
                latency += p.miss_penalty as u64;
            }
        }
        let complete = issue + latency;

        let mut commit = (complete + COMMIT_DELAY).max(self.last_commit);
        if let Some(t) = self.commit.back(p.commit_width as u64) {
            commit = commit.max(t + 1);
        }

        if let Some(loc) = writes(op) {
            self.ready.insert(loc, complete);
        }
        if mnemonic == Mnemonic::Std {
            if let Some(a) = step.ea {
                self.store_ready.insert(a, complete);
            }
        }
        if step.taken {
            self.redirect = self.redirect.max(complete + p.mispredict_penalty as u64);
        }

        self.fetch.push(fetch);
        self.issue.push(issue);
        self.commit.push(commit);
        self.last_fetch = fetch;
        self.last_issue = issue;
        self.last_commit = commit;
        commit
    }
}

/// Committed-instruction budget of one interval run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimBudget {
    pub warmup: u64,
    pub interval: u64,
}

#[derive(Debug, Clone)]
pub struct SimRun {
    /// Records after warm-up, commit times rebased to the last warm-up commit.
    pub trace: IntervalTrace,
    /// The program was still running when the budget ran out.
    pub truncated: bool,
    /// Absolute commit cycle of the last warm-up instruction (0 without warm-up).
    pub warmup_end_cycle: u64,
    /// Absolute commit cycle of the final instruction.
    pub total_cycles: u64,
    pub committed: u64,
    pub final_snapshot: RegisterSnapshot,
}

pub fn simulate(program: &Program, params: &UArchParams, budget: SimBudget) -> Result<SimRun> {
    program.validate()?;
    params.validate()?;
    if budget.interval == 0 {
        return Err(SimError::Params("interval budget must be positive".into()));
    }
    let instructions = program.instructions();
    let mut machine = Machine::new(program);
    let mut timing = TimingModel::new(params);
    let mut warmup_end_cycle = 0;
    while machine.committed() < budget.warmup {
        let Some(step) = machine.step() else {
            return Err(SimError::EmptyInterval { committed: machine.committed() });
        };
        warmup_end_cycle = timing.schedule(&program.code[step.idx], &step);
    }
    let snapshot = machine.snapshot();
    let mut records = Vec::with_capacity(budget.interval.min(1 << 22) as usize);
    let mut total_cycles = warmup_end_cycle;
    while (records.len() as u64) < budget.interval {
        let Some(step) = machine.step() else { break };
        let commit = timing.schedule(&program.code[step.idx], &step);
        total_cycles = commit;
        records.push(CommittedRecord { inst: instructions[step.idx].clone(), commit: commit - warmup_end_cycle });
    }
    if records.is_empty() {
        return Err(SimError::EmptyInterval { committed: machine.committed() });
    }
    let truncated = !machine.halted();
    Ok(SimRun {
        trace: IntervalTrace { interval_id: String::new(), tags: program.tags.clone(), snapshot, records },
        truncated,
        warmup_end_cycle,
        total_cycles,
        committed: machine.committed(),
        final_snapshot: machine.snapshot(),
    })
}

/// Memory access pattern of generated loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StridePattern {
    /// Pointers advance by one doubleword per iteration.
    Unit,
    /// Pointers advance by a full cache line per iteration.
    Line,
    /// Pointers are reloaded from memory (pointer chasing).
    Chase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub kind: TagSet,
    /// Static instruction count of the generated program.
    pub length: usize,
    pub seed: u64,
    pub loop_depth: u32,
    /// Probability that a generated slot opens a forward conditional branch.
    pub branch_density: f64,
    pub stride_pattern: StridePattern,
    /// Wrap the program in an unconditional jump back to the start.
    #[serde(default = "default_true")]
    pub repeat: bool,
}

fn default_true() -> bool {
    true
}

impl WorkloadSpec {
    pub fn new(kind: &[Tag], length: usize, seed: u64) -> WorkloadSpec {
        let kind: TagSet = kind.iter().copied().collect();
        let branch_density = if kind.contains(&Tag::Ctrl) { 0.6 } else { 0.05 };
        WorkloadSpec {
            kind,
            length,
            seed,
            loop_depth: 2,
            branch_density,
            stride_pattern: StridePattern::Unit,
            repeat: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::Spec(m));
        if self.kind.is_empty() {
            return bad("kind must name at least one of CTRL/COMP/MEM".into());
        }
        if self.length == 0 {
            return bad("length must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.branch_density) {
            return bad(format!("branch_density {} outside [0,1]", self.branch_density));
        }
        if self.loop_depth > 3 {
            return bad(format!("loop_depth {} > 3", self.loop_depth));
        }
        if self.kind.contains(&Tag::Ctrl) && self.branch_density < MIN_CTRL_BRANCH_DENSITY {
            return bad(format!(
                "CTRL workloads need branch_density >= {MIN_CTRL_BRANCH_DENSITY}, got {}",
                self.branch_density
            ));
        }
        Ok(())
    }
}

pub const MIN_CTRL_BRANCH_DENSITY: f64 = 0.5;

/// Minimum mix fractions a generated program honours, by kind. Mixes of
/// two or more kinds get each component's single-kind floor divided by the
/// number of kinds.
pub fn mix_contract(kind: &TagSet) -> MixFractions {
    let n = kind.len().max(1) as f64;
    let floor = |t: Tag, full: f64| if kind.contains(&t) { full / n } else { 0.0 };
    MixFractions { compute: floor(Tag::Comp, 0.6), mem: floor(Tag::Mem, 0.4), branch: floor(Tag::Ctrl, 0.25) }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MixFractions {
    pub compute: f64,
    pub mem: f64,
    pub branch: f64,
}

impl MixFractions {
    pub fn of<'a>(mnemonics: impl IntoIterator<Item = &'a Mnemonic>) -> MixFractions {
        let (mut n, mut c, mut m, mut b) = (0usize, 0usize, 0usize, 0usize);
        for x in mnemonics {
            n += 1;
            c += x.is_compute() as usize;
            m += x.is_mem() as usize;
            b += x.is_branch() as usize;
        }
        let f = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
        MixFractions { compute: f(c), mem: f(m), branch: f(b) }
    }

    pub fn satisfies(&self, floor: &MixFractions) -> bool {
        self.compute >= floor.compute && self.mem >= floor.mem && self.branch >= floor.branch
    }
}

// Register plan: r0 stays zero, r13-r15 are memory pointers, r16-r19 loop
// counters, everything else carries data.
const DATA_REGS: [u8; 24] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 20, 21, 22, 23, 24, 25, 26, 27, 28, 29, 30, 31];
const PTR_REGS: [u8; 3] = [13, 14, 15];
const COUNTER_BASE: u8 = 16;
const LOOP_CRF: u8 = 7;
const DATA_REGION: u64 = 0x2000_0000;

#[derive(Debug, Clone, Copy)]
enum Slot {
    Alu,
    Mul,
    Div,
    Fp,
    Load,
    Store,
    Misc,
}

/// Relative weights of non-branch slots per kind.
fn slot_weights(kind: Tag) -> [(Slot, f64); 7] {
    match kind {
        Tag::Comp => [
            (Slot::Alu, 0.36),
            (Slot::Mul, 0.14),
            (Slot::Div, 0.03),
            (Slot::Fp, 0.37),
            (Slot::Load, 0.06),
            (Slot::Store, 0.03),
            (Slot::Misc, 0.01),
        ],
        Tag::Mem => [
            (Slot::Alu, 0.06),
            (Slot::Mul, 0.02),
            (Slot::Div, 0.0),
            (Slot::Fp, 0.02),
            (Slot::Load, 0.62),
            (Slot::Store, 0.26),
            (Slot::Misc, 0.02),
        ],
        Tag::Ctrl => [
            (Slot::Alu, 0.5),
            (Slot::Mul, 0.06),
            (Slot::Div, 0.01),
            (Slot::Fp, 0.05),
            (Slot::Load, 0.2),
            (Slot::Store, 0.08),
            (Slot::Misc, 0.1),
        ],
    }
}

struct Generator<'s> {
    spec: &'s WorkloadSpec,
    rng: ChaCha8Rng,
    code: Vec<MiniOp>,
    weights: Vec<(Slot, f64)>,
}

impl Generator<'_> {
    fn data_reg(&mut self) -> u8 {
        DATA_REGS[self.rng.gen_range(0..DATA_REGS.len())]
    }

    fn ptr_reg(&mut self) -> u8 {
        PTR_REGS[self.rng.gen_range(0..PTR_REGS.len())]
    }

    fn vsr(&mut self) -> u8 {
        self.rng.gen_range(0..16)
    }

    fn pick_slot(&mut self) -> Slot {
        let total: f64 = self.weights.iter().map(|(_, w)| w).sum();
        let mut x = self.rng.gen::<f64>() * total;
        for (slot, w) in &self.weights {
            if x < *w {
                return *slot;
            }
            x -= w;
        }
        self.weights.last().unwrap().0
    }

    fn simple(&mut self) -> MiniOp {
        match self.pick_slot() {
            Slot::Alu => {
                if self.rng.gen_bool(0.5) {
                    MiniOp::Addi { rd: self.data_reg(), ra: self.data_reg(), imm: self.rng.gen_range(-64..=64) }
                } else {
                    MiniOp::Add { rd: self.data_reg(), ra: self.data_reg(), rb: self.data_reg() }
                }
            }
            Slot::Mul => MiniOp::Mul { rd: self.data_reg(), ra: self.data_reg(), rb: self.data_reg() },
            Slot::Div => MiniOp::Divd { rd: self.data_reg(), ra: self.data_reg(), rb: self.data_reg() },
            Slot::Fp => {
                let (fd, fa, fb) = (self.vsr(), self.vsr(), self.vsr());
                if self.rng.gen_bool(0.5) {
                    MiniOp::Fadd { fd, fa, fb }
                } else {
                    MiniOp::Fmul { fd, fa, fb }
                }
            }
            Slot::Load => MiniOp::Ld { rd: self.data_reg(), ra: self.ptr_reg(), disp: 8 * self.rng.gen_range(0..8) },
            Slot::Store => MiniOp::Std { rs: self.data_reg(), ra: self.ptr_reg(), disp: 8 * self.rng.gen_range(0..8) },
            Slot::Misc => {
                if self.rng.gen_bool(0.5) {
                    MiniOp::Mtctr { rs: self.data_reg() }
                } else {
                    MiniOp::Mflr { rd: self.data_reg() }
                }
            }
        }
    }

    fn pointer_bump(&mut self) -> MiniOp {
        let rp = self.ptr_reg();
        match self.spec.stride_pattern {
            StridePattern::Unit => MiniOp::Addi { rd: rp, ra: rp, imm: 8 },
            StridePattern::Line => MiniOp::Addi { rd: rp, ra: rp, imm: 64 },
            StridePattern::Chase => MiniOp::Ld { rd: rp, ra: rp, disp: 0 },
        }
    }

    /// Emits exactly `n` instructions.
    fn seq(&mut self, n: usize, depth: u32) {
        let mut left = n;
        while left > 0 {
            let can_loop = depth < self.spec.loop_depth && left >= 9;
            if can_loop && (depth == 0 || self.rng.gen_bool(0.6)) {
                let max_body = (left - 4).min(if depth + 1 == self.spec.loop_depth { 24 } else { 64 });
                let body = self.rng.gen_range(5.min(max_body)..=max_body);
                self.looped(body, depth);
                left -= body + 4;
            } else if left >= 3 && self.rng.gen_bool(self.spec.branch_density) {
                // one compare feeding a chain of forward skips over its bits
                let crf = self.rng.gen_range(0..LOOP_CRF);
                let ra = self.data_reg();
                self.code.push(MiniOp::Cmpi { crf, ra, imm: self.rng.gen_range(-32..=32) });
                left -= 1;
                let units = self.rng.gen_range(1..=3);
                for _ in 0..units {
                    if left < 2 {
                        break;
                    }
                    let skip = if self.rng.gen_bool(0.7) { 1 } else { 2usize.min(left - 1) };
                    let target = self.code.len() + 1 + skip;
                    let cond = if self.rng.gen_bool(0.5) { BranchIf::True } else { BranchIf::False };
                    let bi = 4 * crf + self.rng.gen_range(0..3);
                    self.code.push(MiniOp::Bc { cond, bi, target });
                    for _ in 0..skip {
                        let op = self.simple();
                        self.code.push(op);
                    }
                    left -= 1 + skip;
                }
            } else {
                let op = self.simple();
                self.code.push(op);
                left -= 1;
            }
        }
    }

    /// Counted loop with `body` instructions between the header and latch.
    fn looped(&mut self, body: usize, depth: u32) {
        let counter = COUNTER_BASE + depth as u8;
        self.code.push(MiniOp::Addi { rd: counter, ra: 0, imm: 0 });
        let top = self.code.len();
        let bumps_ptr = self.spec.kind.contains(&Tag::Mem) && body >= 2;
        self.seq(body - bumps_ptr as usize, depth + 1);
        if bumps_ptr {
            let op = self.pointer_bump();
            self.code.push(op);
        }
        let trips = self.rng.gen_range(4..=24);
        self.code.push(MiniOp::Addi { rd: counter, ra: counter, imm: 1 });
        self.code.push(MiniOp::Cmpi { crf: LOOP_CRF, ra: counter, imm: trips });
        self.code.push(MiniOp::Bc { cond: BranchIf::True, bi: 4 * LOOP_CRF, target: top });
    }
}

fn initial_snapshot(rng: &mut ChaCha8Rng) -> RegisterSnapshot {
    let mut s = RegisterSnapshot::new();
    for r in Reg::all() {
        s.set(r, 0);
    }
    for &r in &DATA_REGS {
        s.set(Reg::gpr(r), rng.gen_range(0..1024u64) as u128);
    }
    for (k, &r) in PTR_REGS.iter().enumerate() {
        s.set(Reg::gpr(r), (DATA_REGION + 0x10_0000 * k as u64) as u128);
    }
    for i in 0..64u8 {
        let x: f64 = rng.gen_range(0.5..1.5);
        s.set(Reg::vsr(i), (x.to_bits() as u128) << 64);
    }
    s.set(Reg::single(RegClass::Lr), (BASE_PC + 4 * rng.gen_range(0..64u64)) as u128);
    s.set(Reg::single(RegClass::Nia), BASE_PC as u128);
    s
}

pub fn generate_program(spec: &WorkloadSpec) -> Result<Program> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let init = initial_snapshot(&mut rng);
    let mem_seed = rng.gen();
    // CTRL shapes branch structure; the other kinds shape the straight-line slots
    let slot_kinds: Vec<Tag> = match spec.kind.iter().copied().filter(|t| *t != Tag::Ctrl).collect::<Vec<_>>() {
        v if v.is_empty() => vec![Tag::Ctrl],
        v => v,
    };
    let mut weights: BTreeMap<usize, (Slot, f64)> = BTreeMap::new();
    for tag in &slot_kinds {
        for (i, (slot, w)) in slot_weights(*tag).into_iter().enumerate() {
            weights.entry(i).or_insert((slot, 0.0)).1 += w / slot_kinds.len() as f64;
        }
    }
    let mut g = Generator { spec, rng, code: Vec::with_capacity(spec.length), weights: weights.into_values().collect() };
    if spec.length == 1 {
        let op = loop {
            let op = g.simple();
            if !op.mnemonic().is_branch() {
                break op;
            }
        };
        g.code.push(op);
    } else if spec.repeat {
        g.seq(spec.length - 1, 0);
        g.code.push(MiniOp::B { target: 0 });
    } else {
        g.seq(spec.length, 0);
    }
    debug_assert_eq!(g.code.len(), spec.length);
    let program = Program { tags: spec.kind.clone(), code: g.code, init, mem_seed };
    program.validate()?;
    Ok(program)
}
