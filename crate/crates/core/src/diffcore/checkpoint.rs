//! Parameter checkpoints.
//!
//! Binary layout (little endian):
//!
//! ```text
//! b"T4CK" | version: u32 | count: u32 |
//!   count x ( name_len: u32 | name bytes | ndim: u32 | dims: u64 * ndim | values: f64 * numel )
//! ```
//!
//! The JSON form is `{"version":1,"params":{name:{"shape":[..],"values":[..]}}}`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::{ParamStore, Tensor};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"T4CK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointFormat {
    Binary,
    Json,
}

#[derive(Serialize, Deserialize)]
struct JsonEntry {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct JsonCheckpoint {
    version: u32,
    params: BTreeMap<String, JsonEntry>,
}

pub fn write_checkpoint<W: Write>(store: &ParamStore, mut out: W, format: CheckpointFormat) -> Result<()> {
    match format {
        CheckpointFormat::Binary => {
            out.write_all(MAGIC)?;
            out.write_all(&VERSION.to_le_bytes())?;
            out.write_all(&(store.len() as u32).to_le_bytes())?;
            for (name, t) in store.iter() {
                out.write_all(&(name.len() as u32).to_le_bytes())?;
                out.write_all(name.as_bytes())?;
                out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
                for &d in t.shape() {
                    out.write_all(&(d as u64).to_le_bytes())?;
                }
                for v in t.values() {
                    out.write_all(&v.to_le_bytes())?;
                }
            }
        }
        CheckpointFormat::Json => {
            let params = store
                .iter()
                .map(|(name, t)| {
                    (
                        name.to_string(),
                        JsonEntry {
                            shape: t.shape().to_vec(),
                            values: t.values().to_vec(),
                        },
                    )
                })
                .collect();
            serde_json::to_writer(&mut out, &JsonCheckpoint { version: VERSION, params })?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Read either format; binary is recognised by its magic bytes.
pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.starts_with(MAGIC) {
        let mut r = &bytes[4..];
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r)?;
        let mut out = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            if r.len() < len {
                return Err(Error::Checkpoint("truncated parameter name".into()));
            }
            let name = String::from_utf8(r[..len].to_vec())
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
            r = &r[len..];
            let ndim = read_u32(&mut r)?;
            let shape = (0..ndim).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            if r.len() < numel * 8 {
                return Err(Error::Checkpoint(format!("truncated values for {name}")));
            }
            let values = (0..numel).map(|_| read_u64(&mut r).map(f64::from_bits)).collect::<Result<Vec<_>>>()?;
            out.push((name, Tensor::new(shape, values)?));
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint("trailing bytes after last parameter".into()));
        }
        Ok(out)
    } else {
        let ck: JsonCheckpoint = serde_json::from_slice(&bytes)?;
        if ck.version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        ck.params
            .into_iter()
            .map(|(name, e)| Ok((name, Tensor::new(e.shape, e.values)?)))
            .collect()
    }
}

pub fn save_checkpoint(store: &ParamStore, path: &Path, format: CheckpointFormat) -> Result<()> {
    write_checkpoint(store, BufWriter::new(File::create(path)?), format)
}

/// Overwrite the values of `store` from a checkpoint file. Every parameter
/// of the store must be present with an identical shape.
pub fn load_checkpoint(path: &Path, store: &mut ParamStore) -> Result<()> {
    let entries = read_checkpoint(BufReader::new(File::open(path)?))?;
    restore_params(store, entries)
}

/// Copy checkpoint entries into `store`, which must have exactly the same
/// parameter names and shapes.
pub fn restore_params(store: &mut ParamStore, entries: Vec<(String, Tensor)>) -> Result<()> {
    if entries.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} parameters, model has {}",
            entries.len(),
            store.len()
        )));
    }
    for (name, tensor) in entries {
        let id = store
            .id(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        let target = store.get_mut(id);
        if target.shape() != tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                tensor.shape(),
                target.shape()
            )));
        }
        target.values_mut().copy_from_slice(tensor.values());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("emb.item", Tensor::new(vec![2, 3], vec![0.1, -2.5, 1e-300, f64::MIN_POSITIVE, 3.0, -0.0]).unwrap())
            .unwrap();
        s.add("head.b3", Tensor::vector(vec![std::f64::consts::PI])).unwrap();
        s
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let s = store();
        let mut bytes = Vec::new();
        write_checkpoint(&s, &mut bytes, CheckpointFormat::Binary).unwrap();
        let entries = read_checkpoint(bytes.as_slice()).unwrap();
        for ((name, t), (n2, t2)) in s.iter().zip(&entries) {
            assert_eq!(name, n2);
            assert_eq!(t.shape(), t2.shape());
            let a: Vec<u64> = t.values().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = t2.values().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn json_round_trip() {
        let s = store();
        let mut bytes = Vec::new();
        write_checkpoint(&s, &mut bytes, CheckpointFormat::Json).unwrap();
        let mut fresh = store();
        fresh.get_mut(fresh.id("head.b3").unwrap()).values_mut()[0] = 0.0;
        restore_params(&mut fresh, read_checkpoint(bytes.as_slice()).unwrap()).unwrap();
        assert_eq!(fresh.flat_values(), s.flat_values());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let s = store();
        let mut bytes = Vec::new();
        write_checkpoint(&s, &mut bytes, CheckpointFormat::Binary).unwrap();
        let mut other = ParamStore::new();
        other.add("emb.item", Tensor::zeros(vec![3, 2])).unwrap();
        other.add("head.b3", Tensor::zeros(vec![1])).unwrap();
        assert!(restore_params(&mut other, read_checkpoint(bytes.as_slice()).unwrap()).is_err());
    }

    #[test]
    fn truncated_binary_rejected() {
        let s = store();
        let mut bytes = Vec::new();
        write_checkpoint(&s, &mut bytes, CheckpointFormat::Binary).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(read_checkpoint(bytes.as_slice()).is_err());
    }
}
