//! Standardization of instructions into the four-segment token form, the
//! fixed vocabulary, and context-matrix construction from register snapshots.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::trace::{CodeTraceClip, Instruction, Mnemonic, Operand, Reg, RegClass, RegisterSnapshot};

#[derive(Debug, Error)]
pub enum TokenizeError {
    #[error("unknown opcode '{0}'")]
    UnknownOpcode(String),
    #[error("instruction '{raw}' needs {needed} tokens but L_token is {limit}")]
    Overflow { raw: String, needed: usize, limit: usize },
    #[error("snapshot lacks register {0}")]
    MissingRegister(Reg),
    #[error("clip of {len} instructions exceeds L_clip_max {max}")]
    Range { len: usize, max: usize },
    #[error("unknown token '{0}'")]
    UnknownToken(String),
    #[error("token index {0} outside vocabulary")]
    BadIndex(usize),
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("encoded dataset: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TokenizeError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Token {
    Pad,
    Rep,
    End,
    DstsOpen,
    DstsClose,
    SrcsOpen,
    SrcsClose,
    MemOpen,
    MemClose,
    Const,
    Opcode(Mnemonic),
    Reg(Reg),
    Byte(u8),
}

const MARKERS: [Token; 10] = [
    Token::Pad,
    Token::Rep,
    Token::End,
    Token::DstsOpen,
    Token::DstsClose,
    Token::SrcsOpen,
    Token::SrcsClose,
    Token::MemOpen,
    Token::MemClose,
    Token::Const,
];

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Pad => f.write_str("<PAD>"),
            Token::Rep => f.write_str("<REP>"),
            Token::End => f.write_str("<END>"),
            Token::DstsOpen => f.write_str("<DSTS>"),
            Token::DstsClose => f.write_str("</DSTS>"),
            Token::SrcsOpen => f.write_str("<SRCS>"),
            Token::SrcsClose => f.write_str("</SRCS>"),
            Token::MemOpen => f.write_str("<MEM>"),
            Token::MemClose => f.write_str("</MEM>"),
            Token::Const => f.write_str("<CONST>"),
            Token::Opcode(m) => f.write_str(m.as_str()),
            Token::Reg(r) => write!(f, "{r}"),
            Token::Byte(b) => write!(f, "0x{b:02x}"),
        }
    }
}

pub const VOCAB_VERSION: &str = "mini-isa-v1";

/// Fixed bijection between tokens and dense indices.
///
/// Layout: 10 markers (PAD first so index 0 pads), one slot per mnemonic,
/// one per architectural register, then 256 byte values.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    reg_base: usize,
    byte_base: usize,
    hash: String,
}

impl Vocabulary {
    pub fn mini_isa() -> Vocabulary {
        let mut tokens: Vec<Token> = MARKERS.to_vec();
        tokens.extend(Mnemonic::ALL.iter().map(|m| Token::Opcode(*m)));
        let reg_base = tokens.len();
        tokens.extend(Reg::all().map(Token::Reg));
        let byte_base = tokens.len();
        tokens.extend((0..=255u8).map(Token::Byte));
        let mut v = Vocabulary { tokens, reg_base, byte_base, hash: String::new() };
        v.hash = v.compute_hash();
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn version(&self) -> &str {
        VOCAB_VERSION
    }

    /// Hex digest over the version and the full token table.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    fn compute_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(VOCAB_VERSION.as_bytes());
        for (i, t) in self.tokens.iter().enumerate() {
            h.update((i as u32).to_le_bytes());
            h.update(t.to_string().as_bytes());
            h.update([0u8]);
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn index(&self, token: Token) -> u16 {
        let idx = match token {
            Token::Opcode(m) => MARKERS.len() + Mnemonic::ALL.iter().position(|x| *x == m).unwrap(),
            Token::Reg(r) => self.reg_base + reg_offset(r),
            Token::Byte(b) => self.byte_base + b as usize,
            marker => MARKERS.iter().position(|x| *x == marker).unwrap(),
        };
        idx as u16
    }

    pub fn token(&self, index: u16) -> Result<Token> {
        self.tokens.get(index as usize).copied().ok_or(TokenizeError::BadIndex(index as usize))
    }

    pub fn parse_token(&self, name: &str) -> Result<Token> {
        self.tokens
            .iter()
            .find(|t| t.to_string() == name)
            .copied()
            .ok_or_else(|| TokenizeError::UnknownToken(name.to_string()))
    }

    pub fn pad_index(&self) -> u16 {
        self.index(Token::Pad)
    }

    pub fn to_file(&self) -> VocabFile {
        VocabFile {
            version: VOCAB_VERSION.to_string(),
            hash: self.hash.clone(),
            size: self.len(),
            tokens: self
                .tokens
                .iter()
                .enumerate()
                .map(|(i, t)| VocabEntry { token: t.to_string(), index: i as u16 })
                .collect(),
        }
    }

    pub fn store(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        serde_json::to_writer_pretty(BufWriter::new(file), &self.to_file())
            .map_err(|e| TokenizeError::Format(e.to_string()))
    }

    /// Loads a vocabulary file and checks it against the built-in table.
    pub fn load(path: &Path) -> Result<Vocabulary> {
        let file: VocabFile = serde_json::from_reader(BufReader::new(File::open(path)?))
            .map_err(|e| TokenizeError::Format(e.to_string()))?;
        let vocab = Vocabulary::mini_isa();
        if file.version != VOCAB_VERSION || file.size != vocab.len() || file.hash != vocab.hash {
            return Err(TokenizeError::VocabMismatch(format!(
                "file {} / {} vs built-in {} / {}",
                file.version, file.hash, VOCAB_VERSION, vocab.hash
            )));
        }
        for e in &file.tokens {
            if vocab.index(vocab.parse_token(&e.token)?) != e.index {
                return Err(TokenizeError::VocabMismatch(format!("token {} index", e.token)));
            }
        }
        Ok(vocab)
    }
}

fn reg_offset(r: Reg) -> usize {
    let mut off = 0usize;
    for c in RegClass::ALL {
        if c == r.class() {
            return off + r.index() as usize;
        }
        off += c.count() as usize;
    }
    unreachable!()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VocabFile {
    pub version: String,
    pub hash: String,
    pub size: usize,
    pub tokens: Vec<VocabEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VocabEntry {
    pub token: String,
    pub index: u16,
}

pub const DEFAULT_L_TOKEN: usize = 24;
pub const DEFAULT_L_CLIP_MAX: usize = 256;

/// A standardized instruction, PAD-filled to `L_token`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StandardizedInstruction {
    pub tokens: Vec<Token>,
}

impl StandardizedInstruction {
    /// Tokens up to and including END.
    pub fn content(&self) -> &[Token] {
        let end = self.tokens.iter().position(|t| *t == Token::End).unwrap_or(self.tokens.len());
        &self.tokens[..=end.min(self.tokens.len() - 1)]
    }
}

/// Registers the raw assembly leaves implicit, keyed by opcode.
fn implicit_operands(m: Mnemonic) -> (&'static [Reg], &'static [Reg]) {
    const CR: Reg = Reg::single(RegClass::Cr);
    const CTR: Reg = Reg::single(RegClass::Ctr);
    const NIA: Reg = Reg::single(RegClass::Nia);
    const LR: Reg = Reg::single(RegClass::Lr);
    match m {
        Mnemonic::Cmpi => (&[CR], &[]),
        Mnemonic::Mtctr => (&[CTR], &[]),
        Mnemonic::B => (&[NIA], &[]),
        Mnemonic::Bc => (&[NIA], &[CR]),
        Mnemonic::Mflr => (&[], &[LR]),
        _ => (&[], &[]),
    }
}

fn push_operand(out: &mut Vec<Token>, op: &Operand) {
    match op {
        Operand::Reg(r) => out.push(Token::Reg(*r)),
        Operand::Const => out.push(Token::Const),
    }
}

/// Unpadded token sequence: REP, OPCODE, DSTS, SRCS, optional MEM, END.
pub fn standardize_tokens(inst: &Instruction) -> Vec<Token> {
    let (implicit_dsts, implicit_srcs) = implicit_operands(inst.mnemonic);
    let mut out = Vec::with_capacity(DEFAULT_L_TOKEN);
    out.push(Token::Rep);
    out.push(Token::Opcode(inst.mnemonic));
    out.push(Token::DstsOpen);
    inst.dsts.iter().for_each(|op| push_operand(&mut out, op));
    out.extend(implicit_dsts.iter().map(|r| Token::Reg(*r)));
    out.push(Token::DstsClose);
    out.push(Token::SrcsOpen);
    inst.srcs.iter().for_each(|op| push_operand(&mut out, op));
    out.extend(implicit_srcs.iter().map(|r| Token::Reg(*r)));
    out.push(Token::SrcsClose);
    if let Some(mem) = &inst.mem {
        out.push(Token::MemOpen);
        out.push(Token::Reg(mem.base));
        if mem.offset_present {
            out.push(Token::Const);
        }
        out.push(Token::MemClose);
    }
    out.push(Token::End);
    out
}

pub fn standardize(inst: &Instruction, l_token: usize) -> Result<StandardizedInstruction> {
    let mut tokens = standardize_tokens(inst);
    if tokens.len() > l_token {
        return Err(TokenizeError::Overflow {
            raw: inst.raw.clone(),
            needed: tokens.len(),
            limit: l_token,
        });
    }
    tokens.resize(l_token, Token::Pad);
    Ok(StandardizedInstruction { tokens })
}

/// Stable 64-bit content key: SHA-256 over the unpadded token indices of
/// every instruction, truncated to its first eight bytes.
pub fn content_key<'a, I>(insts: I) -> u64
where
    I: IntoIterator<Item = &'a Instruction>,
{
    let vocab = vocab();
    let mut h = Sha256::new();
    for inst in insts {
        for t in standardize_tokens(inst) {
            h.update(vocab.index(t).to_le_bytes());
        }
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Process-wide built-in vocabulary.
pub fn vocab() -> &'static Vocabulary {
    use std::sync::OnceLock;
    static VOCAB: OnceLock<Vocabulary> = OnceLock::new();
    VOCAB.get_or_init(Vocabulary::mini_isa)
}

/// How a register value is cut into value tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueGrouping {
    /// One token per byte (two hex digits): width/8 value rows.
    #[default]
    Byte,
    /// One token per hex digit: width/4 value rows.
    Nibble,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextMatrixSpec {
    pub registers: Vec<Reg>,
    pub grouping: ValueGrouping,
}

impl ContextMatrixSpec {
    /// GPR0-15, CR, LR, CTR, XER, CIA, NIA.
    pub fn desk() -> Self {
        let mut registers: Vec<Reg> = (0..16).map(Reg::gpr).collect();
        registers.extend(
            [RegClass::Cr, RegClass::Lr, RegClass::Ctr, RegClass::Xer, RegClass::Cia, RegClass::Nia]
                .into_iter()
                .map(Reg::single),
        );
        ContextMatrixSpec { registers, grouping: ValueGrouping::Byte }
    }

    /// Every register class of the context table: 32 GPR, 64 VSR and the
    /// single control/status registers.
    pub fn full() -> Self {
        ContextMatrixSpec { registers: Reg::all().collect(), grouping: ValueGrouping::Byte }
    }

    fn value_rows(&self, reg: Reg) -> usize {
        let bits = reg.class().width_bits() as usize;
        match self.grouping {
            ValueGrouping::Byte => bits / 8,
            ValueGrouping::Nibble => bits / 4,
        }
    }

    /// Total row count M.
    pub fn rows(&self) -> usize {
        self.registers.iter().map(|r| 1 + self.value_rows(*r)).sum()
    }
}

pub fn build_context_matrix(snapshot: &RegisterSnapshot, spec: &ContextMatrixSpec) -> Result<Vec<Token>> {
    let mut rows = Vec::with_capacity(spec.rows());
    for &reg in &spec.registers {
        let value = snapshot.get(reg).ok_or(TokenizeError::MissingRegister(reg))?;
        rows.push(Token::Reg(reg));
        let n = spec.value_rows(reg);
        let bits_per = match spec.grouping {
            ValueGrouping::Byte => 8,
            ValueGrouping::Nibble => 4,
        };
        let mask = (1u128 << bits_per) - 1;
        for k in (0..n).rev() {
            rows.push(Token::Byte(((value >> (k * bits_per)) & mask) as u8));
        }
    }
    Ok(rows)
}

/// Tokenizer shape settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodeConfig {
    pub l_token: usize,
    pub l_clip_max: usize,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        EncodeConfig { l_token: DEFAULT_L_TOKEN, l_clip_max: DEFAULT_L_CLIP_MAX }
    }
}

/// A clip in index form: `n_inst × l_token` token indices, `M` context
/// indices and the time label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedClip {
    pub interval_id: String,
    pub start_idx: usize,
    pub content_key: u64,
    pub n_inst: usize,
    pub l_token: usize,
    pub tokens: Vec<u16>,
    pub context: Vec<u16>,
    pub label: f64,
}

impl EncodedClip {
    pub fn instruction(&self, i: usize) -> &[u16] {
        &self.tokens[i * self.l_token..(i + 1) * self.l_token]
    }

    /// Padded `(l_clip_max, l_token)` matrix plus a row mask (true = real row).
    pub fn padded(&self, l_clip_max: usize, pad: u16) -> (Vec<Vec<u16>>, Vec<bool>) {
        let mut rows = Vec::with_capacity(l_clip_max);
        let mut mask = Vec::with_capacity(l_clip_max);
        for i in 0..l_clip_max {
            if i < self.n_inst {
                rows.push(self.instruction(i).to_vec());
                mask.push(true);
            } else {
                rows.push(vec![pad; self.l_token]);
                mask.push(false);
            }
        }
        (rows, mask)
    }
}

pub fn encode_clip(clip: &CodeTraceClip, spec: &ContextMatrixSpec, cfg: EncodeConfig) -> Result<EncodedClip> {
    if clip.len() > cfg.l_clip_max {
        return Err(TokenizeError::Range { len: clip.len(), max: cfg.l_clip_max });
    }
    let vocab = vocab();
    let mut tokens = Vec::with_capacity(clip.len() * cfg.l_token);
    for inst in clip.instructions() {
        let std = standardize(inst, cfg.l_token)?;
        tokens.extend(std.tokens.iter().map(|t| vocab.index(*t)));
    }
    let context = build_context_matrix(&clip.start_snapshot, spec)?
        .into_iter()
        .map(|t| vocab.index(t))
        .collect();
    Ok(EncodedClip {
        interval_id: clip.interval_id.clone(),
        start_idx: clip.start_idx,
        content_key: clip.content_key,
        n_inst: clip.len(),
        l_token: cfg.l_token,
        tokens,
        context,
        label: clip.time as f64,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct EncHeader {
    version: String,
    vocab_hash: String,
    l_token: usize,
    m: usize,
    count: usize,
}

/// Writes an `.enc.jsonl` file: a shape header then one clip per line.
pub fn store_encoded(clips: &[EncodedClip], m: usize, l_token: usize, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = EncHeader {
        version: VOCAB_VERSION.into(),
        vocab_hash: vocab().hash().into(),
        l_token,
        m,
        count: clips.len(),
    };
    let fmt_err = |e: serde_json::Error| TokenizeError::Format(e.to_string());
    writeln!(w, "{}", serde_json::to_string(&header).map_err(fmt_err)?)?;
    for c in clips {
        writeln!(w, "{}", serde_json::to_string(c).map_err(fmt_err)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_encoded(path: &Path) -> Result<Vec<EncodedClip>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header: EncHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line?).map_err(|e| TokenizeError::Format(e.to_string()))?,
        None => return Err(TokenizeError::Format("empty file".into())),
    };
    if header.vocab_hash != vocab().hash() {
        return Err(TokenizeError::VocabMismatch(header.vocab_hash));
    }
    let mut out = Vec::with_capacity(header.count);
    for line in lines {
        let c: EncodedClip =
            serde_json::from_str(&line?).map_err(|e| TokenizeError::Format(e.to_string()))?;
        if c.l_token != header.l_token || c.context.len() != header.m || c.tokens.len() != c.n_inst * c.l_token {
            return Err(TokenizeError::Format(format!("clip {}@{} has wrong shape", c.interval_id, c.start_idx)));
        }
        out.push(c);
    }
    if out.len() != header.count {
        return Err(TokenizeError::Format(format!("expected {} clips, found {}", header.count, out.len())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{MemAccess, MemKind};

    fn gpr(i: u8) -> Operand {
        Operand::Reg(Reg::gpr(i))
    }

    fn inst(m: Mnemonic, dsts: Vec<Operand>, srcs: Vec<Operand>, mem: Option<MemAccess>) -> Instruction {
        Instruction { pc: 0x100, mnemonic: m, dsts, srcs, mem, raw: m.to_string() }
    }

    fn content(i: &Instruction) -> Vec<Token> {
        standardize(i, DEFAULT_L_TOKEN).unwrap().content().to_vec()
    }

    #[test]
    fn vocabulary_size_and_bijection() {
        let v = Vocabulary::mini_isa();
        // 10 markers + 13 opcodes + 104 registers + 256 bytes
        assert_eq!(v.len(), 10 + 13 + 104 + 256);
        assert_eq!(v.pad_index(), 0);
        for i in 0..v.len() as u16 {
            let t = v.token(i).unwrap();
            assert_eq!(v.index(t), i);
            assert_eq!(v.parse_token(&t.to_string()).unwrap(), t);
        }
        assert!(v.token(v.len() as u16).is_err());
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.vocab.json");
        let v = Vocabulary::mini_isa();
        v.store(&p).unwrap();
        assert_eq!(Vocabulary::load(&p).unwrap().hash(), v.hash());
        let text = std::fs::read_to_string(&p).unwrap().replace(VOCAB_VERSION, "other");
        std::fs::write(&p, text).unwrap();
        assert!(matches!(Vocabulary::load(&p), Err(TokenizeError::VocabMismatch(_))));
    }

    #[test]
    fn addi_layout() {
        let i = inst(Mnemonic::Addi, vec![gpr(10)], vec![gpr(10), Operand::Const], None);
        let s = standardize(&i, DEFAULT_L_TOKEN).unwrap();
        let expect = vec![
            Token::Rep,
            Token::Opcode(Mnemonic::Addi),
            Token::DstsOpen,
            Token::Reg(Reg::gpr(10)),
            Token::DstsClose,
            Token::SrcsOpen,
            Token::Reg(Reg::gpr(10)),
            Token::Const,
            Token::SrcsClose,
            Token::End,
        ];
        assert_eq!(&s.tokens[..10], expect.as_slice());
        assert!(s.tokens[10..].iter().all(|t| *t == Token::Pad));
        assert_eq!(s.tokens.len(), DEFAULT_L_TOKEN);
    }

    #[test]
    fn load_layout() {
        let mem = MemAccess { kind: MemKind::Load, base: Reg::gpr(31), offset_present: true };
        let i = inst(Mnemonic::Ld, vec![gpr(9)], vec![], Some(mem));
        assert_eq!(
            content(&i),
            vec![
                Token::Rep,
                Token::Opcode(Mnemonic::Ld),
                Token::DstsOpen,
                Token::Reg(Reg::gpr(9)),
                Token::DstsClose,
                Token::SrcsOpen,
                Token::SrcsClose,
                Token::MemOpen,
                Token::Reg(Reg::gpr(31)),
                Token::Const,
                Token::MemClose,
                Token::End,
            ]
        );
    }

    #[test]
    fn cmpi_gets_implicit_cr() {
        let i = inst(Mnemonic::Cmpi, vec![], vec![gpr(10), Operand::Const], None);
        let c = content(&i);
        let cr = Token::Reg(Reg::single(RegClass::Cr));
        let open = c.iter().position(|t| *t == Token::DstsOpen).unwrap();
        let close = c.iter().position(|t| *t == Token::DstsClose).unwrap();
        assert!(c[open..close].contains(&cr));
    }

    #[test]
    fn branch_keeps_empty_srcs_and_nia() {
        let i = inst(Mnemonic::B, vec![], vec![], None);
        assert_eq!(
            content(&i),
            vec![
                Token::Rep,
                Token::Opcode(Mnemonic::B),
                Token::DstsOpen,
                Token::Reg(Reg::single(RegClass::Nia)),
                Token::DstsClose,
                Token::SrcsOpen,
                Token::SrcsClose,
                Token::End,
            ]
        );
    }

    #[test]
    fn overflow_is_error() {
        let i = inst(Mnemonic::Add, vec![gpr(1)], vec![gpr(2), gpr(3)], None);
        assert!(matches!(standardize(&i, 6), Err(TokenizeError::Overflow { needed: 10, .. })));
    }

    #[test]
    fn gpr10_register_matrix() {
        let mut snap = RegisterSnapshot::new();
        snap.set(Reg::gpr(10), 0x0123_4567_89ab_cdef);
        let spec = ContextMatrixSpec { registers: vec![Reg::gpr(10)], grouping: ValueGrouping::Byte };
        let rows = build_context_matrix(&snap, &spec).unwrap();
        let expect: Vec<Token> = std::iter::once(Token::Reg(Reg::gpr(10)))
            .chain([0x01, 0x23, 0x45, 0x67, 0x89, 0xab, 0xcd, 0xef].into_iter().map(Token::Byte))
            .collect();
        assert_eq!(rows, expect);
        let nib = ContextMatrixSpec { grouping: ValueGrouping::Nibble, ..spec };
        let rows = build_context_matrix(&snap, &nib).unwrap();
        assert_eq!(rows.len(), 17);
        assert_eq!(rows[1], Token::Byte(0));
        assert_eq!(rows[16], Token::Byte(0xf));
    }

    #[test]
    fn desk_spec_has_194_rows() {
        assert_eq!(ContextMatrixSpec::desk().rows(), 16 * 9 + 5 + 5 * 9);
        assert_eq!(ContextMatrixSpec::desk().rows(), 194);
        // 32*9 + 64*17 + 3*5 (CR, FPSCR, VSCR) + 5*9
        assert_eq!(ContextMatrixSpec::full().rows(), 288 + 1088 + 15 + 45);
    }

    #[test]
    fn zero_snapshot_all_zero_bytes() {
        let mut snap = RegisterSnapshot::new();
        for r in Reg::all() {
            snap.set(r, 0);
        }
        let rows = build_context_matrix(&snap, &ContextMatrixSpec::desk()).unwrap();
        assert_eq!(rows.len(), 194);
        assert!(rows.iter().all(|t| matches!(t, Token::Reg(_) | Token::Byte(0))));
    }

    #[test]
    fn missing_register_reported() {
        let snap = RegisterSnapshot::new();
        assert!(matches!(
            build_context_matrix(&snap, &ContextMatrixSpec::desk()),
            Err(TokenizeError::MissingRegister(_))
        ));
    }
}
