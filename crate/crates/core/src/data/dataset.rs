//! Dataset assembly and the `CSID` binary format.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::channel::{generate_spatial_frequency_channel, ChannelConfig};
use super::transform::{leading_energy_fraction, truncate_and_normalize, AngularDelay, CsiSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn stream_tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Test => 2,
        }
    }
}

/// Sizes shared by every sample of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDims {
    pub subcarriers: usize,
    pub nc: usize,
    pub nt: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dims: DatasetDims,
    /// Generation settings; absent for datasets read back from disk.
    pub config: Option<ChannelConfig>,
    pub split: Option<Split>,
    pub samples: Vec<CsiSample>,
    /// Mean fraction of transformed energy inside the retained rows, when
    /// known.
    pub retained_energy: Option<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        2 * self.dims.nc * self.dims.nt
    }

    /// Stacks the selected samples into a `[b, 2, Nc, Nt]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor<f32> {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.samples[i].matrix.data());
        }
        Tensor::new(vec![indices.len(), 2, self.dims.nc, self.dims.nt], data).expect("dataset batch shape")
    }

    pub fn all(&self) -> Tensor<f32> {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }
}

/// Attempts per sample before giving up on an all-zero draw.
const MAX_REDRAWS: usize = 64;

/// Generates `n` samples, each from its own ChaCha stream keyed by split and
/// index, so any sample can be reproduced in isolation.
pub fn generate_split(cfg: &ChannelConfig, split: Split, n: usize) -> Result<Dataset> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::config(
            match split {
                Split::Train => "n_train",
                Split::Test => "n_test",
            },
            "must be at least 1",
        ));
    }
    let transform = AngularDelay::new(cfg.subcarriers, cfg.nt);
    let mut samples = Vec::with_capacity(n);
    let mut energy = 0.0;
    for index in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream((split.stream_tag() << 48) | index as u64);
        let mut redraws = 0;
        let sample = loop {
            let h = transform.forward(&generate_spatial_frequency_channel(cfg, &mut rng)?)?;
            match truncate_and_normalize(&h, cfg.nc) {
                Ok(s) => {
                    energy += leading_energy_fraction(&h, cfg.nc);
                    break s;
                }
                Err(Error::DegenerateSample) if redraws < MAX_REDRAWS => redraws += 1,
                Err(e) => return Err(e),
            }
        };
        samples.push(sample);
    }
    Ok(Dataset {
        dims: DatasetDims { subcarriers: cfg.subcarriers, nc: cfg.nc, nt: cfg.nt },
        config: Some(cfg.clone()),
        split: Some(split),
        samples,
        retained_energy: Some(energy / n as f64),
    })
}

pub fn build_dataset(cfg: &ChannelConfig, n_train: usize, n_test: usize) -> Result<(Dataset, Dataset)> {
    Ok((generate_split(cfg, Split::Train, n_train)?, generate_split(cfg, Split::Test, n_test)?))
}

pub const DATASET_MAGIC: &[u8; 4] = b"CSID";
pub const DATASET_VERSION: u32 = 1;
/// Magic, version, N̄c, Nc, Nt and sample count.
pub const DATASET_HEADER_LEN: usize = 24;

/// Bytes occupied by a dataset of `n` samples.
pub fn dataset_file_len(n: usize, nc: usize, nt: usize) -> usize {
    DATASET_HEADER_LEN + n * (4 + 4 * 2 * nc * nt)
}

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let mut buf = Vec::with_capacity(dataset_file_len(ds.len(), ds.dims.nc, ds.dims.nt));
    buf.extend_from_slice(DATASET_MAGIC);
    for v in [DATASET_VERSION, ds.dims.subcarriers as u32, ds.dims.nc as u32, ds.dims.nt as u32, ds.len() as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for s in &ds.samples {
        buf.extend_from_slice(&s.scale.to_le_bytes());
        for v in s.matrix.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_dataset(ds)).map_err(|e| Error::io(path, e))
}

/// Little-endian cursor that reports the offset of whatever it fails on.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Reader { bytes, pos: 0, what }
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    pub(crate) fn err(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Format { what: self.what, offset: offset as u64, reason: reason.into() }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(
                self.bytes.len(),
                format!("truncated: needed {n} bytes at offset {}, file ends at {}", self.pos, self.bytes.len()),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let m = self.take(4)?;
        if m != expected {
            return Err(self.err(0, format!("bad magic {m:?}, expected {:?}", String::from_utf8_lossy(expected))));
        }
        Ok(())
    }

    pub(crate) fn version(&mut self, expected: u32) -> Result<()> {
        let v = self.u32()?;
        if v != expected {
            return Err(Error::Version { what: self.what, found: v, expected });
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.err(self.pos, format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes, "dataset");
    r.magic(DATASET_MAGIC)?;
    r.version(DATASET_VERSION)?;
    let at = r.pos();
    let (subcarriers, nc, nt, count) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    if nc == 0 || nt == 0 || nc > subcarriers {
        return Err(r.err(at, format!("invalid dimensions N̄c={subcarriers} Nc={nc} Nt={nt}")));
    }
    if count == 0 {
        return Err(r.err(at + 12, "dataset holds no samples"));
    }
    let expected = dataset_file_len(count, nc, nt);
    if bytes.len() < expected {
        return Err(r.err(bytes.len(), format!("truncated: {count} samples need {expected} bytes, found {}", bytes.len())));
    }
    let n = 2 * nc * nt;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let at = r.pos();
        let scale = r.f32()?;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(r.err(at, format!("non-positive normalization scale {scale}")));
        }
        let data = r.take(4 * n)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        samples.push(CsiSample { matrix: Tensor::new(vec![2, nc, nt], data)?, scale });
    }
    r.finish()?;
    Ok(Dataset { dims: DatasetDims { subcarriers, nc, nt }, config: None, split: None, samples, retained_energy: None })
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    decode_dataset(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
