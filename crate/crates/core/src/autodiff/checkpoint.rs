//! `FPTC` checkpoints: magic, u16 version, metadata string, named parameter
//! table with f32 values, and optional optimizer moments. Little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::atomic_write;

use super::optim::{AdamW, AdamWConfig};
use super::params::ParamStore;
use super::tensor::Tensor;

const MAGIC: &[u8; 4] = b"FPTC";
const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub metadata: String,
    pub params: ParamStore,
    /// `(step, first moments, second moments)` in parameter order.
    pub optimizer: Option<(usize, Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

impl Checkpoint {
    pub fn restore_optimizer(&self, config: AdamWConfig) -> Option<AdamW> {
        self.optimizer.as_ref().map(|(step, m, v)| AdamW {
            config,
            step: *step,
            m: m.clone(),
            v: v.clone(),
        })
    }
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len());
    buf.extend_from_slice(s.as_bytes());
}

pub fn encode_checkpoint(metadata: &str, params: &ParamStore, optimizer: Option<&AdamW>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    put_str(&mut buf, metadata);
    put_u32(&mut buf, params.len());
    for (_, p) in params.iter() {
        put_str(&mut buf, &p.name);
        put_u32(&mut buf, p.value.shape().len());
        for &d in p.value.shape() {
            put_u32(&mut buf, d);
        }
        for &v in p.value.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    match optimizer {
        None => buf.push(0),
        Some(opt) => {
            buf.push(1);
            buf.extend_from_slice(&(opt.step as u64).to_le_bytes());
            for moments in [&opt.m, &opt.v] {
                for vals in moments.iter() {
                    for &v in vals {
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not an FPTC checkpoint".into()));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let metadata = r.string()?;
    let count = r.u32()?;
    let mut params = ParamStore::new();
    let mut sizes = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let nd = r.u32()?;
        let shape = (0..nd).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("oversized tensor".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if params.id(&name).is_some() {
            return Err(Error::Format(format!("duplicate parameter `{name}`")));
        }
        params.add(name, Tensor::new(shape, data)?);
        sizes.push(n);
    }
    let optimizer = match r.take(1)?[0] {
        0 => None,
        1 => {
            let step = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
            let mut read_moments = || -> Result<Vec<Vec<f64>>> {
                sizes
                    .iter()
                    .map(|&n| {
                        Ok(r.take(n * 8)?
                            .chunks_exact(8)
                            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                            .collect())
                    })
                    .collect()
            };
            let m = read_moments()?;
            let v = read_moments()?;
            Some((step, m, v))
        }
        t => return Err(Error::Format(format!("bad optimizer flag {t}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(Checkpoint {
        metadata,
        params,
        optimizer,
    })
}

pub fn save_checkpoint(path: &Path, metadata: &str, params: &ParamStore, optimizer: Option<&AdamW>) -> Result<()> {
    atomic_write(path, &encode_checkpoint(metadata, params, optimizer))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Format(format!("cannot read checkpoint {}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::new(vec![2, 3], vec![0.5, -1.25, 2.0, 0.0, 3.5, -0.75]).unwrap());
        s.add("mu", Tensor::scalar(1.0));
        s
    }

    #[test]
    fn round_trip_with_and_without_optimizer() {
        let s = store();
        let dec = decode_checkpoint(&encode_checkpoint("k=3", &s, None)).unwrap();
        assert_eq!(dec.metadata, "k=3");
        assert_eq!(dec.params, s);
        assert!(dec.optimizer.is_none());

        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        opt.step = 7;
        opt.m[0][1] = 0.1;
        opt.v[1][0] = 1e-7;
        let dec = decode_checkpoint(&encode_checkpoint("", &s, Some(&opt))).unwrap();
        let (step, m, v) = dec.optimizer.unwrap();
        assert_eq!((step, m, v), (7, opt.m.clone(), opt.v.clone()));
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_checkpoint("", &store(), None);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
    }
}
