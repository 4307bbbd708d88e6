//! Binary agent checkpoints.
//!
//! Layout (little-endian): `"BSCA" | version:u8 = 1 | vocab, embed, hidden: u32 |
//! n: u64 | params: n x f64 | adam step: u64 | lr, beta1, beta2, eps: f64 |
//! m: n x f64 | v: n x f64`.

use std::fs;
use std::path::Path;

use super::{Adam, AgentError, AgentParams, AgentShape};

const MAGIC: &[u8; 4] = b"BSCA";
const VERSION: u8 = 1;

pub fn encode_checkpoint(params: &AgentParams, opt: &Adam) -> Vec<u8> {
    let shape = params.shape();
    let n = params.as_slice().len();
    let mut out = Vec::with_capacity(4 + 1 + 12 + 8 + 8 * (3 * n + 5));
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for d in [shape.vocab, shape.embed, shape.hidden] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(n as u64).to_le_bytes());
    let mut put = |xs: &[f64]| xs.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
    put(params.as_slice());
    out.extend_from_slice(&opt.step.to_le_bytes());
    out.extend_from_slice(&opt.lr.to_le_bytes());
    out.extend_from_slice(&opt.beta1.to_le_bytes());
    out.extend_from_slice(&opt.beta2.to_le_bytes());
    out.extend_from_slice(&opt.eps.to_le_bytes());
    for xs in [&opt.m, &opt.v] {
        xs.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AgentError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(AgentError::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, AgentError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, AgentError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, AgentError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, AgentError> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(AgentParams, Adam), AgentError> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4)? != MAGIC {
        return Err(AgentError::Checkpoint("bad checkpoint magic".into()));
    }
    let version = r.take(1)?[0];
    if version != VERSION {
        return Err(AgentError::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let shape = AgentShape {
        vocab: r.u32()? as usize,
        embed: r.u32()? as usize,
        hidden: r.u32()? as usize,
    };
    let n = r.u64()? as usize;
    if n != shape.param_count() {
        return Err(AgentError::ShapeMismatch {
            expected: shape.param_count(),
            found: n,
        });
    }
    let params = AgentParams::from_flat(shape, r.f64s(n)?)?;
    let step = r.u64()?;
    let lr = r.f64()?;
    let mut opt = Adam::new(n, lr);
    opt.step = step;
    opt.beta1 = r.f64()?;
    opt.beta2 = r.f64()?;
    opt.eps = r.f64()?;
    opt.m = r.f64s(n)?;
    opt.v = r.f64s(n)?;
    if r.at != bytes.len() {
        return Err(AgentError::Checkpoint("trailing bytes after checkpoint".into()));
    }
    Ok((params, opt))
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &AgentParams, opt: &Adam) -> Result<(), AgentError> {
    fs::write(path.as_ref(), encode_checkpoint(params, opt))
        .map_err(|e| AgentError::Checkpoint(format!("{}: {e}", path.as_ref().display())))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(AgentParams, Adam), AgentError> {
    let bytes = fs::read(path.as_ref())
        .map_err(|e| AgentError::Checkpoint(format!("{}: {e}", path.as_ref().display())))?;
    decode_checkpoint(&bytes)
}
