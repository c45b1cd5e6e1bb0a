//! Checkpoint layout: magic, format version (u32), header length (u64),
//! JSON header (config, training metadata, parameter names and shapes),
//! then every parameter as little-endian f32 in declaration order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, TrainingMeta};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PRCMODEL";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    metadata: TrainingMeta,
    params: Vec<(String, usize, usize)>,
}

impl Model {
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = Header {
            config: self.config.clone(),
            metadata: self.meta.clone(),
            params: self
                .params
                .params
                .iter()
                .map(|p| (p.name.clone(), p.value.rows, p.value.cols))
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(std::io::Error::other)?;
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let mut payload = Vec::with_capacity(4 * self.num_params());
        for p in &self.params.params {
            for &x in &p.value.data {
                payload.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        w.write_all(&payload)?;
        w.flush()
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        if buf.len() < 20 || &buf[..8] != MAGIC {
            return Err(corrupt("missing magic bytes"));
        }
        let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let len = u64::from_le_bytes(buf[12..20].try_into().unwrap()) as usize;
        let body = &buf[20..];
        if body.len() < len {
            return Err(corrupt("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..len])
            .map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;
        let mut model = Model::skeleton(header.config)?;
        let declared: Vec<(String, usize, usize)> = model
            .params
            .params
            .iter()
            .map(|p| (p.name.clone(), p.value.rows, p.value.cols))
            .collect();
        if declared != header.params {
            return Err(corrupt("parameter layout does not match its config"));
        }
        let payload = &body[len..];
        if payload.len() != 4 * model.num_params() {
            return Err(corrupt(&format!(
                "payload has {} bytes, expected {}",
                payload.len(),
                4 * model.num_params()
            )));
        }
        let mut values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
        for p in &mut model.params.params {
            for x in &mut p.value.data {
                *x = values.next().expect("length checked");
            }
        }
        model.meta = header.metadata;
        Ok(model)
    }
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    model
        .write_checkpoint(std::io::BufWriter::new(file))
        .map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Model::read_checkpoint(std::io::BufReader::new(file))
}
