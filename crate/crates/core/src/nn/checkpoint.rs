//! `PNC1` model checkpoints.
//!
//! Layout: magic `PNC1`, little-endian `u32` header length, a `key=value`
//! header (network configuration, `n_params`, free-form `meta.*` keys),
//! then per parameter: `u32` name length, the name, `u32` rank, `u32`
//! dimensions and little-endian `f32` values. Running batch-norm moments
//! are stored like any other parameter.

use std::io::{Read, Write};
use std::path::Path;

use super::{UNet, UNetConfig};
use crate::config::KeyValues;
use crate::error::{bail, Error, Result};

const MAGIC: &[u8; 4] = b"PNC1";

/// A network plus whatever the trainer needs to use it again
/// (normalization statistics, class scheme, lead time...).
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: UNet<f32>,
    pub metadata: KeyValues,
}

pub fn checkpoint_bytes(net: &UNet<f32>, metadata: &KeyValues) -> Vec<u8> {
    let mut kv = net.config().to_kv();
    kv.set("n_params", net.params().len());
    for (k, v) in metadata.iter() {
        kv.set(&format!("meta.{k}"), v);
    }
    let text = kv.render();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for p in net.params().iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for d in &p.shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in &p.value {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.0.len() < n {
            bail!(Format, "truncated PNC1 file");
        }
        let (a, b) = self.0.split_at(n);
        self.0 = b;
        Ok(a)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader(bytes);
    if r.take(4)? != MAGIC {
        bail!(Format, "not a PNC1 file");
    }
    let len = r.u32()?;
    let text = std::str::from_utf8(r.take(len)?).map_err(|e| Error::Format(format!("header: {e}")))?;
    let kv = KeyValues::parse(text).map_err(|e| Error::Format(e.to_string()))?;
    let cfg = UNetConfig::from_kv(&kv).map_err(|e| Error::Format(e.to_string()))?;
    let n_params: usize = kv.get("n_params").map_err(|e| Error::Format(e.to_string()))?.unwrap_or(0);
    let mut metadata = KeyValues::new();
    for (k, v) in kv.iter() {
        if let Some(k) = k.strip_prefix("meta.") {
            metadata.set(k, v);
        }
    }
    let mut net = UNet::<f32>::new(cfg, 0)?;
    if n_params != net.params().len() {
        bail!(Format, "checkpoint holds {n_params} parameters, network has {}", net.params().len());
    }
    let mut seen = vec![false; n_params];
    for _ in 0..n_params {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|e| Error::Format(format!("name: {e}")))?.to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let Some(id) = net.params().find(&name) else {
            bail!(Format, "unknown parameter {name}");
        };
        if seen[id] {
            bail!(Format, "parameter {name} appears twice");
        }
        seen[id] = true;
        let p = net.params_mut().get_mut(id);
        if p.shape != shape {
            bail!(Format, "parameter {name} has shape {:?}, expected {:?}", shape, p.shape);
        }
        let raw = r.take(4 * p.value.len())?;
        for (v, c) in p.value.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(c.try_into().unwrap());
        }
        if p.value.iter().any(|v| !v.is_finite()) {
            bail!(Format, "parameter {name} holds non-finite values");
        }
    }
    if !r.0.is_empty() {
        bail!(Format, "{} trailing bytes after the last parameter", r.0.len());
    }
    Ok(Checkpoint { net, metadata })
}

pub fn save_checkpoint(path: &Path, net: &UNet<f32>, metadata: &KeyValues) -> Result<()> {
    std::fs::File::create(path)?.write_all(&checkpoint_bytes(net, metadata))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    checkpoint_from_bytes(&buf)
}
