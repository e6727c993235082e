//! Versioned binary container for named parameter groups.
//!
//! ```text
//! magic        8 bytes  "MVFDCKPT"
//! version      u32 LE
//! meta_len     u32 LE, followed by meta_len bytes of UTF-8 JSON
//! n_groups     u32 LE
//! per group:   u16 LE name_len, name bytes, u8 ndim, ndim x u32 LE extents,
//!              product(extents) x f64 LE values
//! ```

use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};
use serde_json::{json, Value};

use super::{Model, ModelConfig};
use crate::numerics::Tensor;
use crate::{Error, Result, Scalar};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MVFDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub metadata: Value,
    pub groups: Vec<(String, Vec<usize>, Vec<f64>)>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("checkpoint truncated at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

impl Container {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.metadata)?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.groups.len() as u32).to_le_bytes());
        for (name, shape, values) in &self.groups {
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::invalid(format!("group name too long: {name}")))?;
            if shape.iter().product::<usize>() != values.len() || shape.len() > u8::MAX as usize {
                return Err(Error::invalid(format!("group {name} has inconsistent shape {shape:?}")));
            }
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(shape.len() as u8);
            for &d in shape {
                let d = u32::try_from(d).map_err(|_| Error::invalid("extent exceeds u32"))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let meta_len = r.u32()? as usize;
        let metadata = serde_json::from_slice(r.take(meta_len)?)?;
        let n = r.u32()? as usize;
        let mut groups = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("group name is not UTF-8".into()))?;
            let ndim = r.u8()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let bytes = r.take(count.checked_mul(8).ok_or_else(|| Error::Format("group too large".into()))?)?;
            let values = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            groups.push((name, shape, values));
        }
        if r.pos != buf.len() {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint", buf.len() - r.pos)));
        }
        Ok(Self { metadata, groups })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn meta_field<T: DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .metadata
            .get(key)
            .ok_or_else(|| Error::Format(format!("checkpoint metadata has no {key:?}")))?;
        Ok(serde_json::from_value(v.clone())?)
    }

    pub fn group(&self, name: &str) -> Option<&(String, Vec<usize>, Vec<f64>)> {
        self.groups.iter().find(|g| g.0 == name)
    }
}

pub(crate) fn tensor_group<S: Scalar>(name: &str, t: &Tensor<S>) -> (String, Vec<usize>, Vec<f64>) {
    (
        name.to_string(),
        t.shape().to_vec(),
        t.data().iter().map(|v| v.to_f64_lossy()).collect(),
    )
}

pub(crate) fn group_tensor<S: Scalar>(g: &(String, Vec<usize>, Vec<f64>)) -> Result<Tensor<S>> {
    Tensor::new(g.1.clone(), g.2.iter().map(|&v| S::lit(v)).collect())
}

impl<S: Scalar> Model<S> {
    /// Container holding the config under `"model"` plus any extra metadata fields.
    pub fn to_container(&self, extra: impl Serialize) -> Result<Container> {
        let mut metadata = json!({ "kind": "model", "model": self.config() });
        if let (Value::Object(m), Value::Object(e)) = (&mut metadata, serde_json::to_value(extra)?) {
            m.extend(e);
        }
        Ok(Container {
            metadata,
            groups: self.params().iter().map(|p| tensor_group(&p.name, &p.tensor)).collect(),
        })
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let config: ModelConfig = c.meta_field("model")?;
        let mut m = Self::zeros(config)?;
        let values = m
            .params()
            .iter()
            .map(|p| {
                let g = c
                    .group(&p.name)
                    .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {}", p.name)))?;
                Ok((p.name.clone(), group_tensor(g)?))
            })
            .collect::<Result<Vec<_>>>()?;
        m.load_values(values)?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_round_trips_bit_exactly() {
        let m = Model::<f64>::init(ModelConfig::default(), 5).unwrap();
        let bytes = m.to_container(json!({"split_seed": 3})).unwrap().to_bytes().unwrap();
        let c = Container::from_bytes(&bytes).unwrap();
        assert_eq!(c.meta_field::<u64>("split_seed").unwrap(), 3);
        let back = Model::<f64>::from_container(&c).unwrap();
        for (a, b) in m.params().iter().zip(back.params()) {
            assert!(a.tensor.data().iter().zip(b.tensor.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back.to_container(json!({"split_seed": 3})).unwrap().to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let m = Model::<f64>::init(ModelConfig::default(), 5).unwrap();
        let bytes = m.to_container(json!({})).unwrap().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Container::from_bytes(&bad).is_err());
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(Container::from_bytes(&v2), Err(Error::Version { found: 2, .. })));
        assert!(Container::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
