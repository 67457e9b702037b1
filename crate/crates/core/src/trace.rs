//! Instruction, trace, snapshot and clip data model, plus the line-delimited
//! `.trace.jsonl` interchange format.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TraceError>;

/// Architectural register classes carried in traces and snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RegClass {
    #[serde(rename = "GPR")]
    Gpr,
    #[serde(rename = "VSR")]
    Vsr,
    #[serde(rename = "CR")]
    Cr,
    #[serde(rename = "LR")]
    Lr,
    #[serde(rename = "CTR")]
    Ctr,
    #[serde(rename = "XER")]
    Xer,
    #[serde(rename = "FPSCR")]
    Fpscr,
    #[serde(rename = "VSCR")]
    Vscr,
    #[serde(rename = "CIA")]
    Cia,
    #[serde(rename = "NIA")]
    Nia,
}

impl RegClass {
    pub const ALL: [RegClass; 10] = [
        RegClass::Gpr,
        RegClass::Vsr,
        RegClass::Cr,
        RegClass::Lr,
        RegClass::Ctr,
        RegClass::Xer,
        RegClass::Fpscr,
        RegClass::Vscr,
        RegClass::Cia,
        RegClass::Nia,
    ];

    /// Number of architectural registers in the class.
    pub fn count(self) -> u8 {
        match self {
            RegClass::Gpr => 32,
            RegClass::Vsr => 64,
            _ => 1,
        }
    }

    /// Valid width in bits.
    pub fn width_bits(self) -> u32 {
        match self {
            RegClass::Vsr => 128,
            RegClass::Cr | RegClass::Fpscr | RegClass::Vscr => 32,
            _ => 64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RegClass::Gpr => "GPR",
            RegClass::Vsr => "VSR",
            RegClass::Cr => "CR",
            RegClass::Lr => "LR",
            RegClass::Ctr => "CTR",
            RegClass::Xer => "XER",
            RegClass::Fpscr => "FPSCR",
            RegClass::Vscr => "VSCR",
            RegClass::Cia => "CIA",
            RegClass::Nia => "NIA",
        }
    }

    fn from_name(s: &str) -> Option<RegClass> {
        RegClass::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// A register name: class plus index within the class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Reg {
    class: RegClass,
    index: u8,
}

impl Reg {
    pub fn new(class: RegClass, index: u8) -> Result<Reg> {
        if index >= class.count() {
            return Err(TraceError::Validation(format!(
                "register index {index} out of range for {}",
                class.name()
            )));
        }
        Ok(Reg { class, index })
    }

    pub fn gpr(index: u8) -> Reg {
        Reg::new(RegClass::Gpr, index).expect("GPR index in range")
    }

    pub fn vsr(index: u8) -> Reg {
        Reg::new(RegClass::Vsr, index).expect("VSR index in range")
    }

    /// One of the single-register classes (CR, LR, CTR, ...).
    pub const fn single(class: RegClass) -> Reg {
        Reg { class, index: 0 }
    }

    pub fn class(self) -> RegClass {
        self.class
    }

    pub fn index(self) -> u8 {
        self.index
    }

    /// Every architectural register in canonical order.
    pub fn all() -> impl Iterator<Item = Reg> {
        RegClass::ALL
            .into_iter()
            .flat_map(|c| (0..c.count()).map(move |i| Reg { class: c, index: i }))
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.class.count() == 1 {
            f.write_str(self.class.name())
        } else {
            write!(f, "{}{}", self.class.name(), self.index)
        }
    }
}

impl FromStr for Reg {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Reg> {
        let split = s.find(|c: char| c.is_ascii_digit()).unwrap_or(s.len());
        let (name, digits) = s.split_at(split);
        let class = RegClass::from_name(name)
            .ok_or_else(|| TraceError::Validation(format!("unknown register '{s}'")))?;
        let index = if digits.is_empty() {
            if class.count() != 1 {
                return Err(TraceError::Validation(format!("register '{s}' needs an index")));
            }
            0
        } else {
            if class.count() == 1 {
                return Err(TraceError::Validation(format!("register '{s}' takes no index")));
            }
            digits
                .parse::<u8>()
                .map_err(|_| TraceError::Validation(format!("bad register index in '{s}'")))?
        };
        Reg::new(class, index)
    }
}

/// Symbolic operand: either a register or an (opaque) constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operand {
    Reg(Reg),
    Const,
}

#[derive(Serialize, Deserialize)]
struct OperandRepr {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    r: Option<RegClass>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    i: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    c: Option<bool>,
}

impl Serialize for Operand {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = match self {
            Operand::Reg(r) => OperandRepr { r: Some(r.class), i: Some(r.index), c: None },
            Operand::Const => OperandRepr { r: None, i: None, c: Some(true) },
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Operand {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = OperandRepr::deserialize(d)?;
        match (repr.r, repr.i, repr.c) {
            (Some(class), Some(index), None) => {
                Reg::new(class, index).map(Operand::Reg).map_err(de::Error::custom)
            }
            (None, None, Some(true)) => Ok(Operand::Const),
            _ => Err(de::Error::custom("operand must be {r,i} or {c:true}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MemKind {
    Load,
    Store,
}

/// Memory access descriptor; load and store are exclusive by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MemAccess {
    pub kind: MemKind,
    pub base: Reg,
    pub offset_present: bool,
}

impl MemAccess {
    pub fn is_load(&self) -> bool {
        self.kind == MemKind::Load
    }

    pub fn is_store(&self) -> bool {
        self.kind == MemKind::Store
    }
}

#[derive(Serialize, Deserialize)]
struct MemRepr {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    ld: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    st: Option<bool>,
    base: Operand,
    off: bool,
}

impl Serialize for MemAccess {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let (ld, st) = match self.kind {
            MemKind::Load => (Some(true), None),
            MemKind::Store => (None, Some(true)),
        };
        MemRepr { ld, st, base: Operand::Reg(self.base), off: self.offset_present }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for MemAccess {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = MemRepr::deserialize(d)?;
        let kind = match (repr.ld.unwrap_or(false), repr.st.unwrap_or(false)) {
            (true, false) => MemKind::Load,
            (false, true) => MemKind::Store,
            _ => return Err(de::Error::custom("exactly one of ld/st must be true")),
        };
        let base = match repr.base {
            Operand::Reg(r) => r,
            Operand::Const => return Err(de::Error::custom("memory base must be a register")),
        };
        Ok(MemAccess { kind, base, offset_present: repr.off })
    }
}

/// The fixed mini-ISA opcode set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mnemonic {
    Addi,
    Add,
    Mul,
    Divd,
    Ld,
    Std,
    Cmpi,
    B,
    Bc,
    Mtctr,
    Mflr,
    Fadd,
    Fmul,
}

impl Mnemonic {
    pub const ALL: [Mnemonic; 13] = [
        Mnemonic::Addi,
        Mnemonic::Add,
        Mnemonic::Mul,
        Mnemonic::Divd,
        Mnemonic::Ld,
        Mnemonic::Std,
        Mnemonic::Cmpi,
        Mnemonic::B,
        Mnemonic::Bc,
        Mnemonic::Mtctr,
        Mnemonic::Mflr,
        Mnemonic::Fadd,
        Mnemonic::Fmul,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mnemonic::Addi => "addi",
            Mnemonic::Add => "add",
            Mnemonic::Mul => "mul",
            Mnemonic::Divd => "divd",
            Mnemonic::Ld => "ld",
            Mnemonic::Std => "std",
            Mnemonic::Cmpi => "cmpi",
            Mnemonic::B => "b",
            Mnemonic::Bc => "bc",
            Mnemonic::Mtctr => "mtctr",
            Mnemonic::Mflr => "mflr",
            Mnemonic::Fadd => "fadd",
            Mnemonic::Fmul => "fmul",
        }
    }

    pub fn is_branch(self) -> bool {
        matches!(self, Mnemonic::B | Mnemonic::Bc)
    }

    pub fn is_mem(self) -> bool {
        matches!(self, Mnemonic::Ld | Mnemonic::Std)
    }

    /// Integer and floating-point arithmetic.
    pub fn is_compute(self) -> bool {
        matches!(
            self,
            Mnemonic::Addi
                | Mnemonic::Add
                | Mnemonic::Mul
                | Mnemonic::Divd
                | Mnemonic::Fadd
                | Mnemonic::Fmul
        )
    }
}

impl fmt::Display for Mnemonic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const MAX_OPERANDS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub pc: u64,
    pub mnemonic: Mnemonic,
    pub dsts: Vec<Operand>,
    pub srcs: Vec<Operand>,
    pub mem: Option<MemAccess>,
    pub raw: String,
}

impl Instruction {
    pub fn validate(&self) -> Result<()> {
        if self.dsts.len() > MAX_OPERANDS || self.srcs.len() > MAX_OPERANDS {
            return Err(TraceError::Validation(format!(
                "'{}' has more than {MAX_OPERANDS} operands in one role",
                self.raw
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommittedRecord {
    pub inst: Instruction,
    pub commit: u64,
}

/// Architectural register values. Values are held as integers and rendered as
/// zero-padded lowercase hex of the class's valid width.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RegisterSnapshot {
    values: BTreeMap<Reg, u128>,
}

impl RegisterSnapshot {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, reg: Reg, value: u128) {
        let width = reg.class.width_bits();
        let masked = if width == 128 { value } else { value & ((1u128 << width) - 1) };
        self.values.insert(reg, masked);
    }

    pub fn get(&self, reg: Reg) -> Option<u128> {
        self.values.get(&reg).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Reg, u128)> + '_ {
        self.values.iter().map(|(r, v)| (*r, *v))
    }

    /// Hex rendering used on disk, e.g. `0x0123456789abcdef` for a GPR.
    pub fn hex(&self, reg: Reg) -> Option<String> {
        self.get(reg).map(|v| format_reg_hex(reg, v))
    }

    /// True when every architectural register is present.
    pub fn is_complete(&self) -> bool {
        Reg::all().all(|r| self.values.contains_key(&r))
    }

    pub fn missing(&self) -> Vec<Reg> {
        Reg::all().filter(|r| !self.values.contains_key(r)).collect()
    }
}

pub fn format_reg_hex(reg: Reg, value: u128) -> String {
    let digits = (reg.class.width_bits() / 4) as usize;
    format!("0x{value:0digits$x}")
}

fn parse_reg_hex(reg: Reg, s: &str) -> std::result::Result<u128, String> {
    let digits = s
        .strip_prefix("0x")
        .ok_or_else(|| format!("{reg}: value '{s}' lacks 0x prefix"))?;
    let want = (reg.class.width_bits() / 4) as usize;
    if digits.len() != want {
        return Err(format!("{reg}: expected {want} hex digits, got {}", digits.len()));
    }
    u128::from_str_radix(digits, 16).map_err(|e| format!("{reg}: {e}"))
}

impl Serialize for RegisterSnapshot {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.values.len()))?;
        for (reg, value) in &self.values {
            map.serialize_entry(&reg.to_string(), &format_reg_hex(*reg, *value))?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for RegisterSnapshot {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct SnapVisitor;
        impl<'de> Visitor<'de> for SnapVisitor {
            type Value = RegisterSnapshot;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map of register name to hex value")
            }
            fn visit_map<A: MapAccess<'de>>(
                self,
                mut map: A,
            ) -> std::result::Result<RegisterSnapshot, A::Error> {
                let mut snap = RegisterSnapshot::new();
                while let Some((k, v)) = map.next_entry::<String, String>()? {
                    let reg: Reg = k.parse().map_err(de::Error::custom)?;
                    let value = parse_reg_hex(reg, &v).map_err(de::Error::custom)?;
                    if snap.values.insert(reg, value).is_some() {
                        return Err(de::Error::custom(format!("duplicate register {reg}")));
                    }
                }
                Ok(snap)
            }
        }
        d.deserialize_map(SnapVisitor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tag {
    #[serde(rename = "CTRL")]
    Ctrl,
    #[serde(rename = "COMP")]
    Comp,
    #[serde(rename = "MEM")]
    Mem,
}

impl Tag {
    pub fn name(self) -> &'static str {
        match self {
            Tag::Ctrl => "CTRL",
            Tag::Comp => "COMP",
            Tag::Mem => "MEM",
        }
    }
}

pub type TagSet = std::collections::BTreeSet<Tag>;

/// Display a tag set the way Table-style listings do: `COMP+MEM`.
pub fn tags_label(tags: &TagSet) -> String {
    tags.iter().map(|t| t.name()).collect::<Vec<_>>().join("+")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntervalTrace {
    pub interval_id: String,
    pub tags: TagSet,
    pub snapshot: RegisterSnapshot,
    pub records: Vec<CommittedRecord>,
}

impl IntervalTrace {
    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(TraceError::Validation(format!(
                "interval '{}' has no records",
                self.interval_id
            )));
        }
        let missing = self.snapshot.missing();
        if !missing.is_empty() {
            return Err(TraceError::Validation(format!(
                "snapshot of '{}' lacks {} registers (first: {})",
                self.interval_id,
                missing.len(),
                missing[0]
            )));
        }
        for (i, w) in self.records.windows(2).enumerate() {
            if w[1].commit < w[0].commit {
                return Err(TraceError::Validation(format!(
                    "commit time decreases at record {}: {} -> {}",
                    i + 1,
                    w[0].commit,
                    w[1].commit
                )));
            }
        }
        for r in &self.records {
            r.inst.validate()?;
        }
        Ok(())
    }

    /// Commit-time span of the whole interval, relative to `time_begin`.
    pub fn last_commit(&self) -> u64 {
        self.records.last().map_or(0, |r| r.commit)
    }
}

/// A contiguous slice of an interval labelled with its commit-time delta.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeTraceClip {
    pub interval_id: String,
    /// Index of the first record within the interval.
    pub start_idx: usize,
    pub records: Vec<CommittedRecord>,
    pub time: u64,
    pub start_snapshot: RegisterSnapshot,
    pub content_key: u64,
}

impl CodeTraceClip {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn instructions(&self) -> impl Iterator<Item = &Instruction> {
        self.records.iter().map(|r| &r.inst)
    }
}

/// Stable 64-bit key over the standardized token content of a clip's records.
/// Commit times and snapshots do not participate.
pub fn content_key<'a, I>(insts: I) -> u64
where
    I: IntoIterator<Item = &'a Instruction>,
{
    crate::tokenizer::content_key(insts)
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    interval_id: String,
    tag: Vec<Tag>,
    snapshot: RegisterSnapshot,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    pc: String,
    asm: &'a str,
    op: Mnemonic,
    dsts: &'a [Operand],
    srcs: &'a [Operand],
    #[serde(skip_serializing_if = "Option::is_none")]
    mem: Option<MemAccess>,
    commit: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordIn {
    pc: String,
    asm: String,
    op: Mnemonic,
    dsts: Vec<Operand>,
    srcs: Vec<Operand>,
    #[serde(default)]
    mem: Option<MemAccess>,
    commit: u64,
}

fn parse_pc(s: &str) -> std::result::Result<u64, String> {
    let digits = s.strip_prefix("0x").ok_or_else(|| format!("pc '{s}' lacks 0x prefix"))?;
    if digits.chars().any(|c| c.is_ascii_uppercase()) {
        return Err(format!("pc '{s}' is not lowercase hex"));
    }
    u64::from_str_radix(digits, 16).map_err(|e| format!("pc '{s}': {e}"))
}

/// Canonical header line (no trailing newline).
pub fn header_line(trace: &IntervalTrace) -> String {
    let header = HeaderLine {
        interval_id: trace.interval_id.clone(),
        tag: trace.tags.iter().copied().collect(),
        snapshot: trace.snapshot.clone(),
    };
    serde_json::to_string(&header).expect("header serializes")
}

impl Serialize for CommittedRecord {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RecordOut {
            pc: format!("0x{:x}", self.inst.pc),
            asm: &self.inst.raw,
            op: self.inst.mnemonic,
            dsts: &self.inst.dsts,
            srcs: &self.inst.srcs,
            mem: self.inst.mem,
            commit: self.commit,
        }
        .serialize(s)
    }
}

impl TryFrom<RecordIn> for CommittedRecord {
    type Error = String;

    fn try_from(rec: RecordIn) -> std::result::Result<Self, String> {
        let pc = parse_pc(&rec.pc)?;
        let inst = Instruction { pc, mnemonic: rec.op, dsts: rec.dsts, srcs: rec.srcs, mem: rec.mem, raw: rec.asm };
        inst.validate().map_err(|e| e.to_string())?;
        Ok(CommittedRecord { inst, commit: rec.commit })
    }
}

impl<'de> Deserialize<'de> for CommittedRecord {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        CommittedRecord::try_from(RecordIn::deserialize(d)?).map_err(de::Error::custom)
    }
}

/// Canonical record line (no trailing newline).
pub fn record_line(rec: &CommittedRecord) -> String {
    serde_json::to_string(rec).expect("record serializes")
}

pub fn write_interval<W: Write>(trace: &IntervalTrace, mut w: W) -> Result<()> {
    trace.validate()?;
    writeln!(w, "{}", header_line(trace))?;
    for rec in &trace.records {
        writeln!(w, "{}", record_line(rec))?;
    }
    w.flush()?;
    Ok(())
}

pub fn store_interval(trace: &IntervalTrace, path: &Path) -> Result<()> {
    trace.validate()?;
    let file = File::create(path)?;
    write_interval(trace, BufWriter::new(file))
}

pub fn read_interval<R: BufRead>(reader: R) -> Result<IntervalTrace> {
    let mut lines = reader.lines().enumerate();
    let header: HeaderLine = match lines.next() {
        Some((_, line)) => {
            let line = line?;
            serde_json::from_str(&line)
                .map_err(|e| TraceError::Parse { line: 1, msg: e.to_string() })?
        }
        None => return Err(TraceError::Parse { line: 1, msg: "empty file".into() }),
    };
    let mut records = Vec::new();
    for (i, line) in lines {
        let line = line?;
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let rec: RecordIn = serde_json::from_str(&line)
            .map_err(|e| TraceError::Parse { line: lineno, msg: e.to_string() })?;
        let rec = CommittedRecord::try_from(rec).map_err(|msg| TraceError::Parse { line: lineno, msg })?;
        if let Some(prev) = records.last() {
            let prev: &CommittedRecord = prev;
            if rec.commit < prev.commit {
                return Err(TraceError::Validation(format!(
                    "line {lineno}: commit time {} precedes {}",
                    rec.commit, prev.commit
                )));
            }
        }
        records.push(rec);
    }
    let trace = IntervalTrace {
        interval_id: header.interval_id,
        tags: header.tag.into_iter().collect(),
        snapshot: header.snapshot,
        records,
    };
    trace.validate()?;
    Ok(trace)
}

pub fn load_interval(path: &Path) -> Result<IntervalTrace> {
    let file = File::open(path)?;
    read_interval(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn full_snapshot(fill: u128) -> RegisterSnapshot {
        let mut s = RegisterSnapshot::new();
        for r in Reg::all() {
            s.set(r, fill);
        }
        s
    }

    fn addi(pc: u64, rd: u8, ra: u8) -> Instruction {
        Instruction {
            pc,
            mnemonic: Mnemonic::Addi,
            dsts: vec![Operand::Reg(Reg::gpr(rd))],
            srcs: vec![Operand::Reg(Reg::gpr(ra)), Operand::Const],
            mem: None,
            raw: format!("addi r{rd}, r{ra}, 1"),
        }
    }

    fn trace_with_times(times: &[u64]) -> IntervalTrace {
        IntervalTrace {
            interval_id: "t".into(),
            tags: [Tag::Comp, Tag::Mem].into_iter().collect(),
            snapshot: full_snapshot(0),
            records: times
                .iter()
                .enumerate()
                .map(|(i, &t)| CommittedRecord { inst: addi(0x1000 + 4 * i as u64, 1, 1), commit: t })
                .collect(),
        }
    }

    #[test]
    fn register_names_round_trip() {
        for r in Reg::all() {
            assert_eq!(r.to_string().parse::<Reg>().unwrap(), r);
        }
        assert!("GPR32".parse::<Reg>().is_err());
        assert!("CR1".parse::<Reg>().is_err());
        assert!("GPR".parse::<Reg>().is_err());
        assert_eq!(Reg::all().count(), 104);
    }

    #[test]
    fn snapshot_hex_width() {
        let mut s = RegisterSnapshot::new();
        s.set(Reg::gpr(10), 0x0123_4567_89ab_cdef);
        s.set(Reg::single(RegClass::Cr), 0x1_2345_6789);
        assert_eq!(s.hex(Reg::gpr(10)).unwrap(), "0x0123456789abcdef");
        assert_eq!(s.hex(Reg::single(RegClass::Cr)).unwrap(), "0x23456789");
        let json = serde_json::to_string(&s).unwrap();
        let back: RegisterSnapshot = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        let bad = r#"{"GPR1":"0x12"}"#;
        assert!(serde_json::from_str::<RegisterSnapshot>(bad).is_err());
    }

    #[test]
    fn minimal_file_loads() {
        let t = trace_with_times(&[4, 4, 7]);
        let mut buf = Vec::new();
        write_interval(&t, &mut buf).unwrap();
        let back = read_interval(buf.as_slice()).unwrap();
        assert_eq!(back.records.len(), 3);
        assert_eq!(back, t);
    }

    #[test]
    fn decreasing_commit_times_rejected() {
        let t = trace_with_times(&[5, 5]);
        let mut buf = Vec::new();
        write_interval(&t, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        // rewrite the second record's commit to 3
        let pos = text.rfind("\"commit\":5").unwrap();
        let text = format!("{}\"commit\":3{}", &text[..pos], &text[pos + 10..]);
        match read_interval(text.as_bytes()) {
            Err(TraceError::Validation(msg)) => assert!(msg.contains("line 3"), "{msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn empty_trace_rejected_before_write() {
        let mut t = trace_with_times(&[1]);
        t.records.clear();
        let mut buf = Vec::new();
        assert!(matches!(write_interval(&t, &mut buf), Err(TraceError::Validation(_))));
        assert!(buf.is_empty());
    }

    #[test]
    fn single_record_file_has_header_first() {
        let t = trace_with_times(&[9]);
        let mut buf = Vec::new();
        write_interval(&t, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("{\"interval_id\":\"t\",\"tag\":[\"COMP\",\"MEM\"],\"snapshot\":{\"GPR0\":"));
        assert_eq!(
            lines[1],
            r#"{"pc":"0x1000","asm":"addi r1, r1, 1","op":"addi","dsts":[{"r":"GPR","i":1}],"srcs":[{"r":"GPR","i":1},{"c":true}],"commit":9}"#
        );
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let t = trace_with_times(&[1, 2]);
        let mut buf = Vec::new();
        write_interval(&t, &mut buf).unwrap();
        let mut text = String::from_utf8(buf).unwrap();
        text.push_str("{\"pc\":\"0x10\"\n");
        match read_interval(text.as_bytes()) {
            Err(TraceError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn incomplete_snapshot_rejected() {
        let mut t = trace_with_times(&[1, 2]);
        t.snapshot = RegisterSnapshot::new();
        assert!(matches!(t.validate(), Err(TraceError::Validation(_))));
    }

    #[test]
    fn mem_access_serde() {
        let m = MemAccess { kind: MemKind::Load, base: Reg::gpr(31), offset_present: true };
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, r#"{"ld":true,"base":{"r":"GPR","i":31},"off":true}"#);
        assert_eq!(serde_json::from_str::<MemAccess>(&s).unwrap(), m);
        let both = r#"{"ld":true,"st":true,"base":{"r":"GPR","i":31},"off":true}"#;
        assert!(serde_json::from_str::<MemAccess>(both).is_err());
    }
}
