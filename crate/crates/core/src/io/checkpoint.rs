//! `DSCKPT1` checkpoints: model, clustering layer and the settings needed
//! to embed new clips.
//!
//! ```text
//! "DSCKPT1" | u32 version | u32 header_len | JSON header | DSTF1 tensor block
//! ```
//!
//! The tensor block holds every parameter under its model name, BN running
//! statistics as `<layer>.running_mean` / `<layer>.running_var`, and the
//! cluster centers as `cluster.centers`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::store::{read_records, write_records, TensorRecord};
use crate::audio::{FeatureStats, FrontendConfig};
use crate::cluster::{Matrix, TrainingConfig};
use crate::error::{Error, IoContext, Result};
use crate::model::{ArchitectureSpec, Dscan};
use crate::rng::{stream, Stream};
use crate::tensor::{RunningStats, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"DSCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;
const CENTERS: &str = "cluster.centers";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub spec: ArchitectureSpec,
    pub training: TrainingConfig,
    pub frontend: FrontendConfig,
    pub feature_stats: FeatureStats,
    /// Free-form run facts (iterations, convergence, clip count).
    #[serde(default)]
    pub metadata: serde_json::Value,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: Dscan,
    pub centers: Option<Matrix>,
}

fn stats_tensor(v: &[f32]) -> Tensor {
    Tensor::new([v.len()], v.to_vec()).expect("1-d")
}

impl Checkpoint {
    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = serde_json::to_vec(&self.header)?;
        let len = u32::try_from(header.len())
            .map_err(|_| Error::Format("checkpoint header too large".into()))?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(&header)?;
        let mut records: Vec<TensorRecord> = self
            .model
            .params()
            .iter()
            .map(|p| {
                TensorRecord::new(
                    &p.name,
                    Tensor::new(p.tensor.shape(), p.tensor.data().to_vec()).expect("same shape"),
                )
            })
            .collect();
        for (name, s) in self.model.running_stats() {
            records.push(TensorRecord::new(
                format!("{name}.running_mean"),
                stats_tensor(&s.mean),
            ));
            records.push(TensorRecord::new(
                format!("{name}.running_var"),
                stats_tensor(&s.var),
            ));
        }
        if let Some(c) = &self.centers {
            records.push(TensorRecord::new(CENTERS, c.to_tensor()));
        }
        write_records(w, &records)
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic).map_err(|_| bad("truncated"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("not a DSCKPT1 file"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(|_| bad("truncated"))?;
        let version = u32::from_le_bytes(b4);
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        r.read_exact(&mut b4).map_err(|_| bad("truncated"))?;
        let mut header = vec![0u8; u32::from_le_bytes(b4) as usize];
        r.read_exact(&mut header)
            .map_err(|_| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(&header)?;

        let mut tensors: HashMap<String, Tensor> = read_records(r)?
            .into_iter()
            .map(|rec| (rec.id, rec.tensor))
            .collect();
        let mut model = Dscan::new(header.spec.clone(), &mut stream(0, Stream::Init))?;
        let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
        for name in names {
            let t = tensors
                .remove(&name)
                .ok_or_else(|| bad(&format!("missing parameter {name}")))?;
            model.load_param(&name, t)?;
        }
        let layers: Vec<String> = model.running_stats().map(|(n, _)| n.to_string()).collect();
        for name in layers {
            let mut take = |suffix: &str| {
                tensors
                    .remove(&format!("{name}.{suffix}"))
                    .map(Tensor::into_data)
                    .ok_or_else(|| bad(&format!("missing {name}.{suffix}")))
            };
            let stats = RunningStats {
                mean: take("running_mean")?,
                var: take("running_var")?,
            };
            model.load_running_stats(&name, stats)?;
        }
        let centers = tensors
            .remove(CENTERS)
            .map(|t| Matrix::from_tensor(&t))
            .transpose()?;
        if let Some(extra) = tensors.keys().next() {
            return Err(bad(&format!("unexpected tensor {extra}")));
        }
        Ok(Checkpoint {
            header,
            model,
            centers,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).at(path)?);
        self.write(&mut w)?;
        w.flush().at(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = BufReader::new(File::open(path).at(path)?);
        Checkpoint::read(&mut r).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            e => e,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::BatchNormMode;
    use crate::Tape;

    fn checkpoint() -> Checkpoint {
        let mut model =
            Dscan::new(ArchitectureSpec::reference(3), &mut stream(3, Stream::Init)).unwrap();
        // move the running statistics away from their initial values
        let x = Tensor::randn([2, 128, 156, 1], 1.0, &mut stream(4, Stream::Synth));
        let mut tape = Tape::new();
        let b = model.bind(&mut tape, false);
        let v = tape.constant(x);
        model
            .encode_on(&mut tape, &b, v, BatchNormMode::Train)
            .unwrap();
        Checkpoint {
            header: CheckpointHeader {
                spec: model.spec().clone(),
                training: TrainingConfig::default(),
                frontend: FrontendConfig::default(),
                feature_stats: FeatureStats {
                    mean: -3.5,
                    std: 2.25,
                },
                metadata: serde_json::json!({"joint_iters": 7}),
            },
            model,
            centers: Some(Matrix::new(3, 10, (0..30).map(|i| i as f64 * 0.5).collect()).unwrap()),
        }
    }

    #[test]
    fn round_trip_restores_everything() {
        let ck = checkpoint();
        let mut buf = Vec::new();
        ck.write(&mut buf).unwrap();
        let back = Checkpoint::read(&mut buf.as_slice()).unwrap();
        assert_eq!(back.header, ck.header);
        assert_eq!(back.centers, ck.centers);
        for (a, b) in ck.model.params().iter().zip(back.model.params()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor.data(), b.tensor.data());
        }
        for ((na, sa), (nb, sb)) in ck.model.running_stats().zip(back.model.running_stats()) {
            assert_eq!((na, sa), (nb, sb));
        }
        let x = Tensor::randn([1, 128, 156, 1], 1.0, &mut stream(9, Stream::Synth));
        assert_eq!(ck.model.encode(&x).unwrap(), back.model.encode(&x).unwrap());
    }

    #[test]
    fn damaged_files_are_rejected() {
        let mut buf = Vec::new();
        checkpoint().write(&mut buf).unwrap();
        assert!(Checkpoint::read(&mut &buf[..buf.len() - 3]).is_err());
        let mut wrong = buf.clone();
        wrong[7] = 9;
        assert!(matches!(
            Checkpoint::read(&mut wrong.as_slice()),
            Err(Error::Format(_))
        ));
    }
}
