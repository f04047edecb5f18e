//! `SKT1` sketch encoding.
//!
//! ```text
//! magic "SKT1" | kind u8 | global_seed u64 | p u8 | k u32 | payload
//! ```
//!
//! All integers little-endian. Payloads: HLL `2^p` register bytes; MinHash
//! `k` u32 bins; intermediate `k` u32 values then `k/8` mask bytes, bin 0 in
//! the least significant bit of the first byte.

use crate::error::{FormatError, FormatErrorKind};
use crate::hash::HashConfig;
use crate::kernels::mask_words;
use crate::wire::ByteReader;

use super::{HllSketch, IntermediateSignature, MinHashSignature};

pub const SKETCH_MAGIC: &[u8; 4] = b"SKT1";
pub const SKETCH_HEADER_LEN: usize = 4 + 1 + 8 + 1 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum SketchKind {
    Hll = 1,
    MinHash = 2,
    Intermediate = 3,
}

impl TryFrom<u8> for SketchKind {
    type Error = FormatErrorKind;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Self::Hll),
            2 => Ok(Self::MinHash),
            3 => Ok(Self::Intermediate),
            other => Err(FormatErrorKind::UnknownKind(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Sketch {
    Hll(HllSketch),
    MinHash(MinHashSignature),
    Intermediate(IntermediateSignature),
}

impl Sketch {
    pub fn kind(&self) -> SketchKind {
        match self {
            Sketch::Hll(_) => SketchKind::Hll,
            Sketch::MinHash(_) => SketchKind::MinHash,
            Sketch::Intermediate(_) => SketchKind::Intermediate,
        }
    }

    pub fn config(&self) -> &HashConfig {
        match self {
            Sketch::Hll(s) => s.config(),
            Sketch::MinHash(s) => s.config(),
            Sketch::Intermediate(s) => s.config(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = self.config();
        let mut out = Vec::with_capacity(SKETCH_HEADER_LEN + payload_len(self.kind(), cfg));
        out.extend_from_slice(SKETCH_MAGIC);
        out.push(self.kind() as u8);
        out.extend_from_slice(&cfg.global_seed().to_le_bytes());
        out.push(cfg.precision());
        out.extend_from_slice(&(cfg.num_bins() as u32).to_le_bytes());
        match self {
            Sketch::Hll(s) => s.write_payload(&mut out),
            Sketch::MinHash(s) => s.write_payload(&mut out),
            Sketch::Intermediate(s) => s.write_payload(&mut out),
        }
        out
    }
}

pub(crate) fn payload_len(kind: SketchKind, cfg: &HashConfig) -> usize {
    match kind {
        SketchKind::Hll => cfg.num_registers(),
        SketchKind::MinHash => cfg.num_bins() * 4,
        SketchKind::Intermediate => cfg.num_bins() * 4 + cfg.num_bins().div_ceil(8),
    }
}

/// Decodes one `SKT1` record; the input must contain nothing else.
pub fn deserialize_sketch(bytes: &[u8]) -> Result<Sketch, FormatError> {
    let mut r = ByteReader::new(bytes);
    if r.array::<4>()? != *SKETCH_MAGIC {
        return r.fail_at(0, FormatErrorKind::BadMagic);
    }
    let kind_at = r.offset();
    let kind = SketchKind::try_from(r.u8()?).map_err(|k| FormatError::new(kind_at, k))?;
    let cfg_at = r.offset();
    let seed = r.u64()?;
    let p = r.u8()?;
    let k = r.u32()? as usize;
    let cfg = HashConfig::new(seed, p, k).map_err(|e| FormatError::new(cfg_at, e.into()))?;
    let sketch = match kind {
        SketchKind::Hll => Sketch::Hll(HllSketch::read_payload(&mut r, cfg)?),
        SketchKind::MinHash => Sketch::MinHash(MinHashSignature::read_payload(&mut r, cfg)?),
        SketchKind::Intermediate => Sketch::Intermediate(IntermediateSignature::read_payload(&mut r, cfg)?),
    };
    if r.remaining() != 0 {
        return r.fail(FormatErrorKind::TrailingBytes);
    }
    Ok(sketch)
}

impl HllSketch {
    pub fn to_bytes(&self) -> Vec<u8> {
        Sketch::Hll(self.clone()).to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        match deserialize_sketch(bytes)? {
            Sketch::Hll(s) => Ok(s),
            other => Err(wrong_kind(SketchKind::Hll, other.kind())),
        }
    }

    pub(crate) fn write_payload(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(self.registers());
    }

    pub(crate) fn read_payload(r: &mut ByteReader<'_>, cfg: HashConfig) -> Result<Self, FormatError> {
        let at = r.offset();
        let regs = r.bytes(cfg.num_registers())?.to_vec();
        HllSketch::from_registers(cfg, regs).map_err(|k| FormatError::new(at, k))
    }
}

impl MinHashSignature {
    pub fn to_bytes(&self) -> Vec<u8> {
        Sketch::MinHash(self.clone()).to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        match deserialize_sketch(bytes)? {
            Sketch::MinHash(s) => Ok(s),
            other => Err(wrong_kind(SketchKind::MinHash, other.kind())),
        }
    }

    pub(crate) fn write_payload(&self, out: &mut Vec<u8>) {
        out.reserve(self.bins().len() * 4);
        for b in self.bins() {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }

    pub(crate) fn read_payload(r: &mut ByteReader<'_>, cfg: HashConfig) -> Result<Self, FormatError> {
        let at = r.offset();
        let bins = r.u32_vec(cfg.num_bins())?;
        MinHashSignature::from_bins(cfg, bins).map_err(|k| FormatError::new(at, k))
    }
}

impl IntermediateSignature {
    pub fn to_bytes(&self) -> Vec<u8> {
        Sketch::Intermediate(self.clone()).to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        match deserialize_sketch(bytes)? {
            Sketch::Intermediate(s) => Ok(s),
            other => Err(wrong_kind(SketchKind::Intermediate, other.kind())),
        }
    }

    pub(crate) fn write_payload(&self, out: &mut Vec<u8>) {
        for v in self.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mask_bytes = self.values().len().div_ceil(8);
        let bytes = self.valid_mask().iter().flat_map(|w| w.to_le_bytes());
        out.extend(bytes.take(mask_bytes));
    }

    pub(crate) fn read_payload(r: &mut ByteReader<'_>, cfg: HashConfig) -> Result<Self, FormatError> {
        let at = r.offset();
        let k = cfg.num_bins();
        let values = r.u32_vec(k)?;
        let raw = r.bytes(k.div_ceil(8))?;
        let mut mask = vec![0u64; mask_words(k)];
        for (i, &b) in raw.iter().enumerate() {
            mask[i / 8] |= (b as u64) << (8 * (i % 8));
        }
        IntermediateSignature::from_parts(cfg, values, mask).map_err(|k| FormatError::new(at, k))
    }
}

fn wrong_kind(expected: SketchKind, found: SketchKind) -> FormatError {
    FormatError::new(
        4,
        FormatErrorKind::WrongKind {
            expected: expected as u8,
            found: found as u8,
        },
    )
}
