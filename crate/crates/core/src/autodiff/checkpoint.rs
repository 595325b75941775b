//! Parameter checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "SPANASTE"
//! version  u32      FORMAT_VERSION
//! count    u32      number of records
//! record*  name_len u32, name (utf-8), group u8, ndim u32, dims u64*ndim,
//!          values f64*product(dims)
//! ```

use std::io::Read;
use std::path::Path;

use super::{ParamGroup, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::io::write_atomic;

const MAGIC: &[u8; 8] = b"SPANASTE";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + store.num_values() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        let name = p.name().as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.push(p.group().code());
        let shape = p.value().shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value().values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::checkpoint("<file>", format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parsed checkpoint record.
#[derive(Clone, Debug)]
pub struct Record {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Record>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::checkpoint("<file>", "not a parameter checkpoint (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::checkpoint(
            "<file>",
            format!("unsupported format version {version}"),
        ));
    }
    let count = r.u32("record count")? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::checkpoint("<file>", "parameter name is not utf-8"))?
            .to_string();
        let code = r.take(1, "group")?[0];
        let group = ParamGroup::from_code(code)
            .ok_or_else(|| Error::checkpoint(name.clone(), format!("unknown group code {code}")))?;
        let ndim = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(r.u64("dimension")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::checkpoint(name.clone(), "shape overflows"))?;
        let raw = r.take(
            numel
                .checked_mul(8)
                .ok_or_else(|| Error::checkpoint(name.clone(), "shape overflows"))?,
            "values",
        )?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let value = Tensor::new(shape, values)?;
        records.push(Record { name, group, value });
    }
    if r.pos != bytes.len() {
        return Err(Error::checkpoint("<file>", "trailing bytes after last record"));
    }
    Ok(records)
}

/// Overwrites `store` values from a checkpoint. Every parameter of the store
/// must appear exactly once with an identical shape; extra records are
/// rejected.
pub fn restore(store: &mut ParamStore, records: Vec<Record>) -> Result<()> {
    if records.len() != store.len() {
        return Err(Error::checkpoint(
            "<file>",
            format!(
                "checkpoint holds {} parameters, model expects {}",
                records.len(),
                store.len()
            ),
        ));
    }
    let mut seen = vec![false; store.len()];
    let mut staged = Vec::with_capacity(records.len());
    for rec in records {
        let id = store
            .id(&rec.name)
            .ok_or_else(|| Error::checkpoint(rec.name.clone(), "not a parameter of this model"))?;
        if std::mem::replace(&mut seen[id.index()], true) {
            return Err(Error::checkpoint(rec.name, "appears twice"));
        }
        let expected = store.value(id).shape();
        if expected != rec.value.shape() {
            return Err(Error::checkpoint(
                rec.name.clone(),
                format!(
                    "shape {:?} does not match model shape {:?}",
                    rec.value.shape(),
                    expected
                ),
            ));
        }
        staged.push((id, rec.value));
    }
    for (id, value) in staged {
        *store.get_mut(id).value_mut() = value;
    }
    store.clear_grad();
    Ok(())
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    write_atomic(path, &encode(store))
}

pub fn load(store: &mut ParamStore, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    restore(store, decode(&bytes)?)
}
