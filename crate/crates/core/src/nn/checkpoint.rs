//! Binary checkpoint format: magic, version, the model configuration as
//! JSON, then every parameter with its name, constraint, shape and
//! little-endian `f64` values. Loading reproduces the values bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::params::{Constraint, ParamStore};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ECHORES\0";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

pub fn encode(config_json: &str, store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + store.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_str(&mut out, config_json);
    put_u32(&mut out, store.len() as u32);
    for (_, p) in store.iter() {
        put_str(&mut out, &p.name);
        out.push(match p.constraint {
            Constraint::None => 0,
            Constraint::Positive => 1,
        });
        let (r, c) = p.value.dim();
        put_u32(&mut out, 2);
        out.extend_from_slice(&(r as u64).to_le_bytes());
        out.extend_from_slice(&(c as u64).to_le_bytes());
        for v in p.value.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

pub fn decode(buf: &[u8]) -> Result<(String, ParamStore)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let config = r.string()?;
    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name = r.string()?;
        let constraint = match r.take(1)?[0] {
            0 => Constraint::None,
            1 => Constraint::Positive,
            c => return Err(Error::Checkpoint(format!("{name}: unknown constraint {c}"))),
        };
        let ndim = r.u32()?;
        if ndim != 2 {
            return Err(Error::Checkpoint(format!("{name}: expected 2 dims, got {ndim}")));
        }
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|n| n.checked_mul(8).is_some_and(|b| b <= buf.len()))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: implausible shape {rows}x{cols}")))?;
        let raw = r.take(n * 8)?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let value = Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if store.id(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
        }
        store.add(name, value, constraint);
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok((config, store))
}

pub fn save(path: impl AsRef<Path>, config_json: &str, store: &ParamStore) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(config_json, store);
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<(String, ParamStore)> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    decode(&buf).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::rng_from_seed;
    use crate::nn::params::fan_in_uniform;

    fn store() -> ParamStore {
        let mut rng = rng_from_seed(3);
        let mut s = ParamStore::new();
        s.add("a.w", fan_in_uniform(4, 3, 3, &mut rng), Constraint::None);
        s.add("lambda", Array2::from_elem((2, 1), 0.5413), Constraint::Positive);
        s.add("odd", Array2::from_shape_vec((1, 3), vec![f64::MIN_POSITIVE, -0.0, 1e300]).unwrap(), Constraint::None);
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = store();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save(&p, "{\"x\":1}", &s).unwrap();
        let (cfg, back) = load(&p).unwrap();
        assert_eq!(cfg, "{\"x\":1}");
        for ((_, a), (_, b)) in s.iter().zip(back.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.constraint, b.constraint);
            let ab: Vec<u64> = a.value.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.value.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = encode("{}", &store());
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra).is_err());
    }
}
