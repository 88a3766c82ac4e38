//! The `CSIM` checkpoint format: a model spec followed by its parameters.

use std::fs;
use std::path::Path;

use super::network::Network;
use super::spec::ModelSpec;
use crate::data::dataset::Reader;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CSIM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Magic, version, spec length, spec JSON, parameter count, parameters.
pub fn encode_checkpoint(net: &Network<f32>) -> Vec<u8> {
    let spec = serde_json::to_vec(net.spec()).expect("model specs serialize");
    let flat = net.flat_params();
    let mut buf = Vec::with_capacity(16 + spec.len() + 4 * flat.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    buf.extend_from_slice(&spec);
    buf.extend_from_slice(&(flat.len() as u32).to_le_bytes());
    for v in flat {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Network<f32>> {
    let mut r = Reader::new(bytes, "checkpoint");
    r.magic(CHECKPOINT_MAGIC)?;
    r.version(CHECKPOINT_VERSION)?;
    let len = r.u32()? as usize;
    let at = r.pos();
    let spec: ModelSpec =
        serde_json::from_slice(r.take(len)?).map_err(|e| r.err(at, format!("model spec: {e}")))?;
    spec.validate().map_err(|e| r.err(at, format!("model spec: {e}")))?;
    let at = r.pos();
    let count = r.u32()? as usize;
    let expected = Network::<f32>::new(spec.clone())?.num_params();
    if count != expected {
        return Err(r.err(at, format!("{count} parameters stored, the spec needs {expected}")));
    }
    let flat: Vec<f32> =
        r.take(4 * count)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    r.finish()?;
    Network::from_flat(spec, &flat)
}

pub fn save_checkpoint(path: impl AsRef<Path>, net: &Network<f32>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(net)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network<f32>> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
