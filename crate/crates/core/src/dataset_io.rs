//! Framed binary persistence for [`Dataset`], plus a CSV export.
//!
//! Layout (all integers little-endian `u64`, reals little-endian `f64`):
//!
//! ```text
//! b"EBDS" | version: u8 | root_seed | n | M | len | PopSpec as JSON bytes
//! then M times: len | theta[len] | len | x[len]
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::bench::{fmt_real, Batch, Dataset};
use crate::error::{EbError, Result};
use crate::pop::PopSpec;

pub const MAGIC: &[u8; 4] = b"EBDS";
pub const VERSION: u8 = 1;

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let spec = serde_json::to_vec(&ds.pop).map_err(|e| EbError::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(64 + spec.len() + ds.batches.len() * ds.n * 16);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for v in [
        ds.root_seed,
        ds.n as u64,
        ds.batches.len() as u64,
        spec.len() as u64,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&spec);
    for b in &ds.batches {
        out.extend_from_slice(&(b.theta.len() as u64).to_le_bytes());
        b.theta
            .iter()
            .for_each(|t| out.extend_from_slice(&t.to_le_bytes()));
        out.extend_from_slice(&(b.x.len() as u64).to_le_bytes());
        b.x.iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| EbError::Format(format!("truncated dataset at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        // every element takes at least one byte
        if v as usize > self.buf.len() - self.pos {
            return Err(EbError::Format(format!(
                "length {v} exceeds remaining input"
            )));
        }
        Ok(v as usize)
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(EbError::Format("missing EBDS magic".into()));
    }
    let version = r.take(1)?[0];
    if version != VERSION {
        return Err(EbError::Format(format!(
            "unsupported dataset version {version}"
        )));
    }
    let root_seed = r.u64()?;
    let n = r.u64()? as usize;
    let m = r.u64()?;
    let spec_len = r.len()?;
    let pop: PopSpec =
        serde_json::from_slice(r.take(spec_len)?).map_err(|e| EbError::Format(e.to_string()))?;
    let mut batches = Vec::new();
    for _ in 0..m {
        let len = r.len()?;
        let theta = r
            .take(len * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let len = r.len()?;
        let x = r
            .take(len * 8)?
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        batches.push(Batch { theta, x });
    }
    if r.pos != bytes.len() {
        return Err(EbError::Format("trailing bytes after dataset".into()));
    }
    let ds = Dataset {
        batches,
        n,
        pop,
        root_seed,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, encode_dataset(ds)?).map_err(|e| EbError::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&fs::read(path).map_err(|e| EbError::io(path, e))?)
}

/// One row per coordinate: `batch,index,theta,x`.
pub fn export_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| EbError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "batch,index,theta,x")?;
        for (m, b) in ds.batches.iter().enumerate() {
            for (i, (t, x)) in b.theta.iter().zip(&b.x).enumerate() {
                writeln!(w, "{m},{i},{},{x}", fmt_real(*t))?;
            }
        }
        w.flush()
    };
    body().map_err(|e| EbError::io(path, e))
}
