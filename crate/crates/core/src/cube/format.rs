//! `HCUB` hypercube file layout, little-endian throughout:
//!
//! ```text
//! magic "HCUB" | version u16 | seed u64 | p u8 | k u32 | flags u8
//! dimension name (str) | group-by count u16 | group-by names (str)
//! universe HLL registers | universe MinHash bins
//! cell count u32
//! per cell: key values (str each) | [exact count u64 if flags & 1]
//!           hll | exhll | minhash | exminhash
//! CRC-32 of everything above, u32
//! ```
//!
//! Strings are a u16 byte length followed by UTF-8. Sketch payloads carry no
//! header of their own; the file header fixes their configuration.

use std::fs;
use std::path::Path;

use crate::error::{FormatError, FormatErrorKind};
use crate::hash::HashConfig;
use crate::sketch::{HllSketch, MinHashSignature};
use crate::wire::{put_short_str, ByteReader};

use super::{CellKey, CubeIoError, Cuboid, Hypercube};

pub const HYPERCUBE_MAGIC: &[u8; 4] = b"HCUB";
pub const HYPERCUBE_VERSION: u16 = 1;

const FLAG_EXACT_COUNTS: u8 = 1;

pub fn encode_hypercube(cube: &Hypercube) -> Result<Vec<u8>, FormatError> {
    let cfg = &cube.config;
    let counts = cube.has_exact_counts();
    if cube.cells.iter().any(|c| c.exact_count.is_some() != counts) {
        return Err(FormatError::new(0, FormatErrorKind::Invalid("exact counts present on some cells only".into())));
    }
    let mut out = Vec::new();
    out.extend_from_slice(HYPERCUBE_MAGIC);
    out.extend_from_slice(&HYPERCUBE_VERSION.to_le_bytes());
    out.extend_from_slice(&cfg.global_seed().to_le_bytes());
    out.push(cfg.precision());
    out.extend_from_slice(&(cfg.num_bins() as u32).to_le_bytes());
    out.push(if counts { FLAG_EXACT_COUNTS } else { 0 });
    put_short_str(&mut out, &cube.dimension_name)?;
    let columns = u16::try_from(cube.group_by.len())
        .map_err(|_| FormatError::new(out.len(), FormatErrorKind::Invalid("too many group-by columns".into())))?;
    out.extend_from_slice(&columns.to_le_bytes());
    for name in &cube.group_by {
        put_short_str(&mut out, name)?;
    }
    for sketch_cfg in [cube.universe_hll.config(), cube.universe_minhash.config()] {
        if sketch_cfg != cfg {
            return Err(FormatError::new(out.len(), FormatErrorKind::ConfigMismatch));
        }
    }
    cube.universe_hll.write_payload(&mut out);
    cube.universe_minhash.write_payload(&mut out);
    out.extend_from_slice(&(cube.cells.len() as u32).to_le_bytes());
    for cell in &cube.cells {
        if cell.key.values().len() != cube.group_by.len() {
            return Err(FormatError::new(out.len(), FormatErrorKind::Invalid(format!("key {} has wrong arity", cell.key))));
        }
        for v in cell.key.values() {
            put_short_str(&mut out, v)?;
        }
        if let Some(n) = cell.exact_count {
            out.extend_from_slice(&n.to_le_bytes());
        }
        let configs = [cell.hll.config(), cell.exhll.config(), cell.minhash.config(), cell.exminhash.config()];
        if configs.iter().any(|c| *c != cfg) {
            return Err(FormatError::new(out.len(), FormatErrorKind::ConfigMismatch));
        }
        cell.hll.write_payload(&mut out);
        cell.exhll.write_payload(&mut out);
        cell.minhash.write_payload(&mut out);
        cell.exminhash.write_payload(&mut out);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_hypercube(bytes: &[u8]) -> Result<Hypercube, FormatError> {
    if bytes.len() >= 4 && bytes[..4] != HYPERCUBE_MAGIC[..] {
        return Err(FormatError::new(0, FormatErrorKind::BadMagic));
    }
    if bytes.len() < 4 + 4 {
        return Err(FormatError::new(bytes.len(), FormatErrorKind::Truncated));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("four bytes"));
    let computed = crc32fast::hash(body);
    let parsed = decode_body(body);
    if stored != computed {
        // A short file fails the checksum too; report the truncation instead.
        return match parsed {
            Err(e) if e.kind == FormatErrorKind::Truncated => Err(e),
            _ => Err(FormatError::new(body.len(), FormatErrorKind::Checksum { stored, computed })),
        };
    }
    parsed
}

fn decode_body(body: &[u8]) -> Result<Hypercube, FormatError> {
    let mut r = ByteReader::new(body);
    if r.array::<4>()? != *HYPERCUBE_MAGIC {
        return r.fail_at(0, FormatErrorKind::BadMagic);
    }
    let version_at = r.offset();
    let version = r.u16()?;
    if version != HYPERCUBE_VERSION {
        return r.fail_at(version_at, FormatErrorKind::Version(version));
    }
    let cfg_at = r.offset();
    let seed = r.u64()?;
    let p = r.u8()?;
    let k = r.u32()? as usize;
    let config = HashConfig::new(seed, p, k).map_err(|e| FormatError::new(cfg_at, e.into()))?;
    let flags_at = r.offset();
    let flags = r.u8()?;
    if flags & !FLAG_EXACT_COUNTS != 0 {
        return r.fail_at(flags_at, FormatErrorKind::Invalid(format!("unknown flags {flags:#04x}")));
    }
    let dimension_name = r.short_str()?;
    let columns = r.u16()? as usize;
    let group_by = (0..columns).map(|_| r.short_str()).collect::<Result<Vec<_>, _>>()?;
    let universe_hll = HllSketch::read_payload(&mut r, config)?;
    let universe_minhash = MinHashSignature::read_payload(&mut r, config)?;
    let cell_count = r.u32()? as usize;
    // Each cell needs at least its four sketches; bound the allocation by that.
    let min_cell = 2 * config.num_registers() + 8 * config.num_bins();
    let mut cells: Vec<Cuboid> = Vec::with_capacity(cell_count.min(r.remaining() / min_cell.max(1)));
    for _ in 0..cell_count {
        let key_at = r.offset();
        let key = CellKey((0..columns).map(|_| r.short_str()).collect::<Result<_, _>>()?);
        if cells.last().is_some_and(|prev| prev.key >= key) {
            return r.fail_at(key_at, FormatErrorKind::Invalid(format!("cell {key} out of order or duplicated")));
        }
        let exact_count = if flags & FLAG_EXACT_COUNTS != 0 { Some(r.u64()?) } else { None };
        cells.push(Cuboid {
            key,
            exact_count,
            hll: HllSketch::read_payload(&mut r, config)?,
            exhll: HllSketch::read_payload(&mut r, config)?,
            minhash: MinHashSignature::read_payload(&mut r, config)?,
            exminhash: MinHashSignature::read_payload(&mut r, config)?,
        });
    }
    if r.remaining() != 0 {
        return r.fail(FormatErrorKind::TrailingBytes);
    }
    Ok(Hypercube {
        dimension_name,
        group_by,
        config,
        cells,
        universe_hll,
        universe_minhash,
    })
}

pub fn write_hypercube(cube: &Hypercube, path: &Path) -> Result<(), CubeIoError> {
    let bytes = encode_hypercube(cube).map_err(|source| CubeIoError::Format {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, bytes).map_err(|source| CubeIoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_hypercube(path: &Path) -> Result<Hypercube, CubeIoError> {
    let bytes = fs::read(path).map_err(|source| CubeIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_hypercube(&bytes).map_err(|source| CubeIoError::Format {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::{build_hypercube, RecordBatch};

    fn sample(keep_counts: bool) -> Hypercube {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        let rows = [
            s(&["a", "US", "ü"]),
            s(&["b", "US", "x"]),
            s(&["c", "CA", "x"]),
            s(&["d", "", "y"]),
        ];
        let batch = RecordBatch::from_rows(s(&["PSID", "country", "tag"]), "PSID", rows).unwrap();
        let universe = RecordBatch::from_rows(s(&["PSID"]), "PSID", (0..10).map(|i| vec![format!("{}", (b'a' + i) as char)])).unwrap();
        let config = HashConfig::new(3, 6, 32).unwrap();
        let (cube, _) = build_hypercube("Demo", &batch, &s(&["country", "tag"]), &universe, config).unwrap();
        if keep_counts { cube } else { cube.without_exact_counts() }
    }

    #[test]
    fn round_trip_with_and_without_counts() {
        for keep in [true, false] {
            let cube = sample(keep);
            let bytes = encode_hypercube(&cube).unwrap();
            assert_eq!(decode_hypercube(&bytes).unwrap(), cube);
            assert_eq!(encode_hypercube(&cube).unwrap(), bytes);
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_hypercube(&sample(true)).unwrap();
        assert_eq!(&bytes[..4], b"HCUB");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..14], &3u64.to_le_bytes());
        assert_eq!(bytes[14], 6);
        assert_eq!(&bytes[15..19], &32u32.to_le_bytes());
        assert_eq!(bytes[19], FLAG_EXACT_COUNTS);
        assert_eq!(&bytes[20..26], &[4, 0, b'D', b'e', b'm', b'o']);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = encode_hypercube(&sample(false)).unwrap();

        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert_eq!(decode_hypercube(&magic).unwrap_err(), FormatError::new(0, FormatErrorKind::BadMagic));

        let truncated = &bytes[..bytes.len() - 100];
        assert_eq!(decode_hypercube(truncated).unwrap_err().kind, FormatErrorKind::Truncated);
        assert_eq!(decode_hypercube(&bytes[..3]).unwrap_err().kind, FormatErrorKind::Truncated);

        let mut flipped = bytes.clone();
        let mid = bytes.len() / 2;
        flipped[mid] ^= 0x01;
        assert!(matches!(
            decode_hypercube(&flipped).unwrap_err().kind,
            FormatErrorKind::Checksum { .. } | FormatErrorKind::RegisterRange { .. }
        ));
        let mut tail = bytes.clone();
        *tail.last_mut().unwrap() ^= 0xff;
        assert!(matches!(decode_hypercube(&tail).unwrap_err().kind, FormatErrorKind::Checksum { .. }));

        let mut version = bytes[..bytes.len() - 4].to_vec();
        version[4] = 2;
        let crc = crc32fast::hash(&version);
        version.extend_from_slice(&crc.to_le_bytes());
        assert_eq!(decode_hypercube(&version).unwrap_err(), FormatError::new(4, FormatErrorKind::Version(2)));
    }

    #[test]
    fn file_round_trip_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demo.hcub");
        let cube = sample(true);
        write_hypercube(&cube, &path).unwrap();
        assert_eq!(read_hypercube(&path).unwrap(), cube);
        assert!(matches!(read_hypercube(&dir.path().join("nope")), Err(CubeIoError::Io { .. })));
    }
}
