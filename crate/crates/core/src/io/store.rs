//! `DSTF1` tensor files.
//!
//! ```text
//! "DSTF1" | u32 count | count x ( u16 id_len | id utf-8 | u8 ndims | ndims x u32 | f32 payload )
//! ```
//!
//! All integers and floats are little-endian; payloads are row-major.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, IoContext, Result};
use crate::tensor::Tensor;

pub const STORE_MAGIC: &[u8; 5] = b"DSTF1";

#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub id: String,
    pub tensor: Tensor,
}

impl TensorRecord {
    pub fn new(id: impl Into<String>, tensor: Tensor) -> Self {
        TensorRecord {
            id: id.into(),
            tensor,
        }
    }
}

fn format(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn write_records<W: Write>(w: &mut W, records: &[TensorRecord]) -> Result<()> {
    let count = u32::try_from(records.len()).map_err(|_| format("too many records"))?;
    let mut seen = HashSet::new();
    w.write_all(STORE_MAGIC)?;
    w.write_all(&count.to_le_bytes())?;
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::Input(format!("duplicate record id {:?}", r.id)));
        }
        let id_len = u16::try_from(r.id.len())
            .map_err(|_| format(format!("record id of {} bytes is too long", r.id.len())))?;
        let ndims = u8::try_from(r.tensor.shape().len())
            .map_err(|_| format(format!("{}: too many dimensions", r.id)))?;
        w.write_all(&id_len.to_le_bytes())?;
        w.write_all(r.id.as_bytes())?;
        w.write_all(&[ndims])?;
        for &d in r.tensor.shape() {
            let d =
                u32::try_from(d).map_err(|_| format(format!("{}: dimension too large", r.id)))?;
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(r.tensor.len() * 4);
        for v in r.tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => {
            format(format!("truncated tensor file while reading {what}"))
        }
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_records<R: Read>(r: &mut R) -> Result<Vec<TensorRecord>> {
    let mut magic = [0u8; 5];
    read_exact(r, &mut magic, "magic")?;
    if &magic != STORE_MAGIC {
        return Err(format("not a DSTF1 tensor file"));
    }
    let count = read_u32(r, "record count")? as usize;
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let mut b2 = [0u8; 2];
        read_exact(r, &mut b2, "id length")?;
        let mut id = vec![0u8; u16::from_le_bytes(b2) as usize];
        read_exact(r, &mut id, "id")?;
        let id = String::from_utf8(id).map_err(|_| format("record id is not UTF-8"))?;
        if !seen.insert(id.clone()) {
            return Err(format(format!("duplicate record id {id:?}")));
        }
        let mut nd = [0u8; 1];
        read_exact(r, &mut nd, "ndims")?;
        let shape = (0..nd[0])
            .map(|_| read_u32(r, "dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| format(format!("{id}: shape {shape:?} overflows")))?;
        let mut bytes = vec![0u8; numel];
        read_exact(r, &mut bytes, "payload")?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        records.push(TensorRecord::new(id, Tensor::new(shape, data)?));
    }
    Ok(records)
}

pub fn save_records(path: impl AsRef<Path>, records: &[TensorRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).at(path)?);
    write_records(&mut w, records)?;
    w.flush().at(path)
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<TensorRecord>> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path).at(path)?);
    read_records(&mut r).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        e => e,
    })
}

/// Log-mel features keyed by clip id, each `n_mels x frames`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureStore {
    records: Vec<TensorRecord>,
}

impl FeatureStore {
    pub fn new(records: Vec<TensorRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        let first = records.first().map(|r| r.tensor.shape().to_vec());
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Input(format!("duplicate clip id {:?}", r.id)));
            }
            if r.tensor.shape().len() != 2 || Some(r.tensor.shape()) != first.as_deref() {
                return Err(Error::dim(
                    "feature_store",
                    format!(
                        "{}: feature is {:?}, expected {:?}",
                        r.id,
                        r.tensor.shape(),
                        first.as_deref().unwrap_or(&[])
                    ),
                ));
            }
        }
        Ok(FeatureStore { records })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        FeatureStore::new(load_records(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_records(path, &self.records)
    }

    pub fn records(&self) -> &[TensorRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.id.as_str()).collect()
    }

    /// `[n_mels, frames]` of every record, if any.
    pub fn feature_shape(&self) -> Option<[usize; 2]> {
        self.records
            .first()
            .map(|r| [r.tensor.shape()[0], r.tensor.shape()[1]])
    }

    /// All features stacked into one `[N, n_mels, frames, 1]` batch.
    pub fn to_batch(&self) -> Result<Tensor> {
        let [h, w] = self
            .feature_shape()
            .ok_or_else(|| Error::Input("feature store is empty".into()))?;
        let mut data = Vec::with_capacity(self.len() * h * w);
        for r in &self.records {
            data.extend_from_slice(r.tensor.data());
        }
        Tensor::new([self.len(), h, w, 1], data)
    }
}
