//! Binary checkpoints.
//!
//! Layout: magic `OODB`, format version (u32 BE), then one record per tensor
//! until EOF: name length (u32 BE), UTF-8 name, rank (u32 BE), dims (u32 BE
//! each), little-endian f32 payload. Running BN statistics are stored as
//! `<prefix>.bn.running_mean` / `.running_var`; momentum and epsilon come
//! from the network spec.

use std::collections::BTreeMap;
use std::path::Path;

use super::params::{LayerParams, ParamStore};
use super::spec::NetworkSpec;
use super::Real;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"OODB";
const VERSION: u32 = 1;

fn named_tensors<T: Real>(params: &ParamStore<T>) -> Vec<(String, &Vec<T>)> {
    fn walk<'a, T>(layers: &'a [LayerParams<T>], prefix: &str, out: &mut Vec<(String, &'a Vec<T>)>) {
        for (i, l) in layers.iter().enumerate() {
            let p = format!("{prefix}{i}");
            match l {
                LayerParams::Empty => {}
                LayerParams::Dense { weight, bias } => {
                    out.push((format!("{p}.dense.weight"), weight));
                    out.push((format!("{p}.dense.bias"), bias));
                }
                LayerParams::Conv { weight, bias } => {
                    out.push((format!("{p}.conv.weight"), weight));
                    out.push((format!("{p}.conv.bias"), bias));
                }
                LayerParams::BatchNorm(bn) => {
                    out.push((format!("{p}.bn.gamma"), &bn.gamma));
                    out.push((format!("{p}.bn.beta"), &bn.beta));
                    out.push((format!("{p}.bn.running_mean"), &bn.running_mean));
                    out.push((format!("{p}.bn.running_var"), &bn.running_var));
                }
                LayerParams::Residual(inner) => walk(inner, &format!("{p}."), out),
            }
        }
    }
    let mut out = Vec::new();
    walk(&params.layers, "", &mut out);
    out
}

fn named_tensors_mut<T: Real>(params: &mut ParamStore<T>) -> Vec<(String, &mut Vec<T>)> {
    fn walk<'a, T>(layers: &'a mut [LayerParams<T>], prefix: &str, out: &mut Vec<(String, &'a mut Vec<T>)>) {
        for (i, l) in layers.iter_mut().enumerate() {
            let p = format!("{prefix}{i}");
            match l {
                LayerParams::Empty => {}
                LayerParams::Dense { weight, bias } => {
                    out.push((format!("{p}.dense.weight"), weight));
                    out.push((format!("{p}.dense.bias"), bias));
                }
                LayerParams::Conv { weight, bias } => {
                    out.push((format!("{p}.conv.weight"), weight));
                    out.push((format!("{p}.conv.bias"), bias));
                }
                LayerParams::BatchNorm(bn) => {
                    out.push((format!("{p}.bn.gamma"), &mut bn.gamma));
                    out.push((format!("{p}.bn.beta"), &mut bn.beta));
                    out.push((format!("{p}.bn.running_mean"), &mut bn.running_mean));
                    out.push((format!("{p}.bn.running_var"), &mut bn.running_var));
                }
                LayerParams::Residual(inner) => walk(inner, &format!("{p}."), out),
            }
        }
    }
    let mut out = Vec::new();
    walk(&mut params.layers, "", &mut out);
    out
}

/// Serializes a parameter store (always as f32).
pub fn write_checkpoint<T: Real>(params: &ParamStore<T>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_be_bytes());
    for (name, t) in named_tensors(params) {
        buf.extend_from_slice(&(name.len() as u32).to_be_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&1u32.to_be_bytes());
        buf.extend_from_slice(&(t.len() as u32).to_be_bytes());
        for v in t {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                path: self.path.clone().into(),
                msg: format!("truncated checkpoint at byte {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parses checkpoint bytes into a store shaped by `spec`.
pub fn read_checkpoint<T: Real>(bytes: &[u8], spec: &NetworkSpec, path: &str) -> Result<ParamStore<T>> {
    let fmt = |msg: String| Error::Format {
        path: path.into(),
        msg,
    };
    let mut r = Reader {
        bytes,
        pos: 0,
        path: path.to_string(),
    };
    if r.take(4)? != MAGIC {
        return Err(fmt("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(fmt(format!("unsupported checkpoint version {version}")));
    }
    let mut records: BTreeMap<String, Vec<T>> = BTreeMap::new();
    while r.pos < bytes.len() {
        let n = r.u32()? as usize;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| fmt("tensor name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let mut len = 1usize;
        for _ in 0..rank {
            len = len
                .checked_mul(r.u32()? as usize)
                .ok_or_else(|| fmt("tensor size overflows".into()))?;
        }
        let payload = r.take(len.checked_mul(4).ok_or_else(|| fmt("tensor size overflows".into()))?)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| T::lit(f64::from(f32::from_le_bytes(c.try_into().unwrap()))))
            .collect();
        if records.insert(name.clone(), data).is_some() {
            return Err(fmt(format!("duplicate tensor {name}")));
        }
    }
    let mut params = ParamStore::<T>::init(spec, 0)?;
    for (name, slot) in named_tensors_mut(&mut params) {
        let data = records
            .remove(&name)
            .ok_or_else(|| Error::Consistency(format!("checkpoint lacks tensor {name}")))?;
        if data.len() != slot.len() {
            return Err(Error::Consistency(format!(
                "tensor {name} has {} values, spec expects {}",
                data.len(),
                slot.len()
            )));
        }
        *slot = data;
    }
    if let Some(extra) = records.keys().next() {
        return Err(Error::Consistency(format!("checkpoint has unexpected tensor {extra}")));
    }
    Ok(params)
}

pub fn save_checkpoint<T: Real>(params: &ParamStore<T>, path: &Path) -> Result<()> {
    std::fs::write(path, write_checkpoint(params))?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path, spec: &NetworkSpec) -> Result<ParamStore<T>> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(&bytes, spec, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_for_f32() {
        let spec = NetworkSpec::mini_resnet((1, 8, 8), 3, 4, 8, 0.99, 1e-3);
        let mut p = ParamStore::<f32>::init(&spec, 11).unwrap();
        p.batch_norms_mut()[1].running_mean[0] = 0.125;
        let bytes = write_checkpoint(&p);
        let back: ParamStore<f32> = read_checkpoint(&bytes, &spec, "mem").unwrap();
        assert_eq!(back, p);
        assert_eq!(write_checkpoint(&back), bytes);
    }

    #[test]
    fn rejects_bad_input() {
        let spec = NetworkSpec::mlp((1, 2, 2), 2, 3, 0.9, 1e-3);
        let p = ParamStore::<f32>::init(&spec, 1).unwrap();
        let bytes = write_checkpoint(&p);
        assert!(matches!(
            read_checkpoint::<f32>(b"NOPE\0\0\0\x01", &spec, "x"),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            read_checkpoint::<f32>(&bytes[..bytes.len() - 2], &spec, "x"),
            Err(Error::Format { .. })
        ));
        let other = NetworkSpec::mlp((1, 2, 2), 2, 4, 0.9, 1e-3);
        assert!(matches!(
            read_checkpoint::<f32>(&bytes, &other, "x"),
            Err(Error::Consistency(_))
        ));
    }
}
