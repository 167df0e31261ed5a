//! On-disk formats: the binary model container, constraint JSON and
//! bitstring lists.
//!
//! Model container, all integers little-endian:
//!
//! ```text
//! magic "SYMTNMPS" | version u16 | endian b'L' | reserved u8
//! n u32 | m u32 | centre u32
//! site charges: n × 2 × m i64
//! per site: flux m i64; 3 legs (direction u8, sectors u32, per sector
//!   m i64 + degeneracy u32); blocks u32, per block 3 u32 key + f64 data
//! ```

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use symtn::{BlockTensor, Charge, ChargedIndex, ConstraintSystem, Direction, SymMps};

use crate::error::{CliError, CliResult};
use symtn::Bitstring;

pub const MAGIC: &[u8; 8] = b"SYMTNMPS";
pub const VERSION: u16 = 1;

pub fn encode_model(mps: &SymMps) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&[b'L', 0]);
    let m = mps.charge_len();
    for v in [mps.num_sites(), m, mps.center()] {
        put_u32(&mut out, v);
    }
    for pair in mps.site_charges() {
        for c in pair {
            put_charge(&mut out, c);
        }
    }
    for t in mps.tensors() {
        put_charge(&mut out, t.flux());
        for leg in t.indices() {
            out.push(match leg.direction() {
                Direction::In => 0,
                Direction::Out => 1,
            });
            put_u32(&mut out, leg.num_sectors());
            for s in leg.sectors() {
                put_charge(&mut out, &s.charge);
                put_u32(&mut out, s.degeneracy);
            }
        }
        put_u32(&mut out, t.num_blocks());
        for (key, block) in t.blocks() {
            for &k in key {
                put_u32(&mut out, k);
            }
            for v in block.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> CliResult<SymMps> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(CliError::Validation("not a model file (bad magic)".into()));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(CliError::Validation(format!("unsupported model format version {version}")));
    }
    if r.take(2)? != [b'L', 0] {
        return Err(CliError::Validation("unsupported byte order marker".into()));
    }
    let n = r.u32()?;
    let m = r.u32()?;
    let center = r.u32()?;
    if n == 0 || n > 1 << 20 || m > 1 << 10 {
        return Err(CliError::Validation(format!("implausible header: {n} sites, {m} charges")));
    }
    let mut site_charges = Vec::with_capacity(n);
    for _ in 0..n {
        site_charges.push([r.charge(m)?, r.charge(m)?]);
    }
    let mut tensors = Vec::with_capacity(n);
    for _ in 0..n {
        let flux = r.charge(m)?;
        let mut legs = Vec::with_capacity(3);
        for _ in 0..3 {
            let dir = match r.take(1)?[0] {
                0 => Direction::In,
                1 => Direction::Out,
                d => return Err(CliError::Validation(format!("bad direction byte {d}"))),
            };
            let k = r.u32()?;
            let mut sectors = Vec::with_capacity(k.min(1 << 16));
            for _ in 0..k {
                sectors.push((r.charge(m)?, r.u32()?));
            }
            let leg = ChargedIndex::new(sectors.clone(), dir)?;
            if leg.sectors().iter().zip(&sectors).any(|(a, b)| a.charge != b.0) {
                return Err(CliError::Validation("leg sectors are not sorted by charge".into()));
            }
            legs.push(leg);
        }
        let mut t = BlockTensor::zeros(legs, flux)?;
        let blocks = r.u32()?;
        for _ in 0..blocks {
            let key = vec![r.u32()?, r.u32()?, r.u32()?];
            if (0..3).any(|l| key[l] >= t.index(l).num_sectors()) {
                return Err(CliError::Validation("block key out of range".into()));
            }
            let shape = t.block_shape(&key);
            let len = shape.iter().try_fold(8usize, |acc, &d| acc.checked_mul(d));
            let raw = r.take(len.ok_or_else(|| CliError::Validation("block size overflows".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            t.insert_block(key, ArrayD::from_shape_vec(IxDyn(&shape), data).expect("shape from degeneracies"))?;
        }
        tensors.push(t);
    }
    if r.pos != bytes.len() {
        return Err(CliError::Validation(format!("{} trailing bytes in model file", bytes.len() - r.pos)));
    }
    Ok(SymMps::from_tensors(tensors, site_charges, center)?)
}

pub fn read_model(path: &Path) -> CliResult<SymMps> {
    decode_model(&read(path)?).map_err(|e| e.context(path))
}

pub fn write_model(path: &Path, mps: &SymMps) -> CliResult<()> {
    write(path, &encode_model(mps))
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("count fits in u32").to_le_bytes());
}

fn put_charge(out: &mut Vec<u8>, c: &Charge) {
    for v in c.entries() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> CliResult<&'a [u8]> {
        let end = self.pos.checked_add(k).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CliError::Validation("model file is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> CliResult<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn charge(&mut self, m: usize) -> CliResult<Charge> {
        let raw = self.take(m * 8)?;
        Ok(Charge::new(raw.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect()))
    }
}

/// `{"A": [[…], …], "b": […]}`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ConstraintsFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<i64>>,
    pub b: Vec<i64>,
}

pub fn read_constraints(path: &Path) -> CliResult<ConstraintSystem> {
    let text = read_text(path)?;
    let f: ConstraintsFile =
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    if f.a.is_empty() {
        return Err(CliError::Validation(format!("{}: \"A\" has no rows", path.display())));
    }
    Ok(ConstraintSystem::new(f.a, f.b).map_err(|e| CliError::from(e).context(path))?)
}

/// One bitstring per line, optionally followed by whitespace and a number.
/// Blank lines are ignored.
pub fn read_bitstrings(path: &Path) -> CliResult<Vec<(Bitstring, Option<f64>)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| CliError::Validation(format!("{}:{}: {msg}", path.display(), k + 1));
        let mut parts = line.split_whitespace();
        let bits: Bitstring = parts.next().unwrap().parse().map_err(|e: symtn::Error| bad(e.to_string()))?;
        let value = match parts.next() {
            Some(v) => Some(v.parse::<f64>().map_err(|e| bad(format!("bad number {v:?}: {e}")))?),
            None => None,
        };
        if parts.next().is_some() {
            return Err(bad("expected a bitstring and at most one number".into()));
        }
        out.push((bits, value));
    }
    Ok(out)
}

pub fn bitstring_lines<'a>(xs: impl IntoIterator<Item = &'a Bitstring>) -> String {
    let mut s = String::new();
    for x in xs {
        s.push_str(&x.to_string());
        s.push('\n');
    }
    s
}

pub fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))
}

fn read_text(path: &Path) -> CliResult<String> {
    String::from_utf8(read(path)?).map_err(|_| CliError::Validation(format!("{} is not UTF-8", path.display())))
}

pub fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}
