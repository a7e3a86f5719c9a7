//! Binary parameter checkpoints.
//!
//! Layout: the magic `PRMIM1`, then one record per parameter in name
//! order: name length (u32 LE), UTF-8 name, rank (u32 LE), each dimension
//! (u32 LE), then the values as f32 LE.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ParameterSet};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 6] = b"PRMIM1";

pub fn encode_checkpoint(params: &ParameterSet) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    let u32le = |v: usize| (v as u32).to_le_bytes();
    for (name, t) in params.iter() {
        out.extend_from_slice(&u32le(name.len()));
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&u32le(t.rank()));
        for &d in t.shape() {
            out.extend_from_slice(&u32le(d));
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos.saturating_add(n))
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

/// Decodes every record into a name → tensor map.
pub fn decode_records(bytes: &[u8]) -> Result<BTreeMap<String, Tensor>> {
    if !bytes.starts_with(MAGIC) {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let mut r = Reader { bytes, pos: MAGIC.len() };
    let mut out = BTreeMap::new();
    while r.pos < bytes.len() {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let raw = r.take(count.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        if out.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(Error::Format(format!("duplicate parameter {name:?}")));
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8], config: &ModelConfig) -> Result<ParameterSet> {
    ParameterSet::from_named(config, decode_records(bytes)?)
}

pub fn write_checkpoint(params: &ParameterSet, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path, config: &ModelConfig) -> Result<ParameterSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_at_f32() {
        let c = ModelConfig::toy();
        let p = ParameterSet::init(&c, 4).unwrap();
        let bytes = encode_checkpoint(&p);
        assert!(bytes.starts_with(b"PRMIM1"));
        let q = decode_checkpoint(&bytes, &c).unwrap();
        for ((n1, a), (n2, b)) in p.iter().zip(q.iter()) {
            assert_eq!(n1, n2);
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x as f32 as f64, *y);
            }
        }
        assert_eq!(encode_checkpoint(&q), bytes);
    }

    #[test]
    fn record_layout() {
        let mut c = ModelConfig::toy();
        c.aggregation = crate::model::Aggregation::AveragePool;
        let p = ParameterSet::init(&c, 0).unwrap();
        let bytes = encode_checkpoint(&p);
        // first record in name order is "dec.0.attn.proj.bias", shape [16]
        let name = b"dec.0.attn.proj.bias";
        assert_eq!(&bytes[6..10], &(name.len() as u32).to_le_bytes());
        assert_eq!(&bytes[10..10 + name.len()], name);
        let at = 10 + name.len();
        assert_eq!(&bytes[at..at + 8], &[1, 0, 0, 0, 16, 0, 0, 0]);
    }

    #[test]
    fn rejects_damage() {
        let c = ModelConfig::toy();
        let bytes = encode_checkpoint(&ParameterSet::init(&c, 1).unwrap());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3], &c).is_err());
        assert!(decode_checkpoint(b"PRMIM2", &c).is_err());
        let mut other = c.clone();
        other.dec_dim = 32;
        assert!(decode_checkpoint(&bytes, &other).is_err());
    }
}
