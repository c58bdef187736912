//! Binary network snapshots.
//!
//! Layout (little-endian): magic, format version, activation code, action and
//! bin counts, layer count, `(inputs, outputs)` per layer, parameter count,
//! the flat parameters as `f64`, then a 32-byte configuration digest.

use std::fs;
use std::path::Path;

use super::net::{Activation, ValueNet};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SODANET\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: ValueNet,
    pub config_hash: [u8; 32],
}

pub fn encode(net: &ValueNet, config_hash: &[u8; 32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * net.n_params());
    out.extend_from_slice(MAGIC);
    let put = |out: &mut Vec<u8>, v: u32| out.extend_from_slice(&v.to_le_bytes());
    put(&mut out, VERSION);
    put(&mut out, net.activation().code());
    put(&mut out, net.n_actions() as u32);
    put(&mut out, net.n_bins() as u32);
    put(&mut out, net.layers().len() as u32);
    for layer in net.layers() {
        put(&mut out, layer.weight.nrows() as u32);
        put(&mut out, layer.weight.ncols() as u32);
    }
    out.extend_from_slice(&(net.n_params() as u64).to_le_bytes());
    for p in net.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out.extend_from_slice(config_hash);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a network checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let act_code = r.u32()?;
    let activation = Activation::from_code(act_code)
        .ok_or_else(|| Error::Checkpoint(format!("unknown activation code {act_code}")))?;
    let n_actions = r.u32()? as usize;
    let n_bins = r.u32()? as usize;
    let n_layers = r.u32()? as usize;
    if n_layers == 0 || n_layers > 64 {
        return Err(Error::Checkpoint(format!("implausible layer count {n_layers}")));
    }
    let mut shapes = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        shapes.push((r.u32()? as usize, r.u32()? as usize));
    }
    let chained = shapes.windows(2).all(|w| w[0].1 == w[1].0);
    if !chained || shapes[n_layers - 1].1 != n_actions * n_bins {
        return Err(Error::Checkpoint(format!("inconsistent layer shapes {shapes:?}")));
    }
    let hidden: Vec<usize> = shapes[..n_layers - 1].iter().map(|s| s.1).collect();
    let mut net = ValueNet::zeros(shapes[0].0, &hidden, n_actions, n_bins, activation)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let n_params = r.u64()? as usize;
    if n_params != net.n_params() {
        return Err(Error::Checkpoint(format!(
            "parameter count {n_params} does not match shapes ({})",
            net.n_params()
        )));
    }
    let raw = r.take(n_params.checked_mul(8).ok_or_else(|| Error::Checkpoint("overflow".into()))?)?;
    let params: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    net.set_flat(&params)?;
    if !net.is_finite() {
        return Err(Error::Checkpoint("non-finite parameters".into()));
    }
    let config_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
    }
    Ok(Checkpoint { net, config_hash })
}

pub fn save(path: &Path, net: &ValueNet, config_hash: &[u8; 32]) -> Result<()> {
    fs::write(path, encode(net, config_hash))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}
