//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "MISCCKPT"
//! version  u32      currently 1
//! n_meta   u32      then n_meta × (key: u32 len + utf8, value: u32 len + utf8)
//! n_params u32      then n_params ×
//!     name       u32 len + utf8
//!     decay      u8 (0/1)
//!     precision  u8 (0 = f32, 1 = f64)
//!     ndim       u32, then ndim × u64 dims
//!     values     product(dims) × 4 or 8 bytes, row-major
//! ```
//!
//! Encoding is canonical, so decode followed by encode reproduces the input
//! bytes exactly.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Precision, Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"MISCCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<S> {
    /// Free-form string metadata (model config, vocabulary, ...), kept in order.
    pub metadata: Vec<(String, String)>,
    pub params: ParamStore<S>,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn new(params: ParamStore<S>) -> Self {
        Checkpoint {
            metadata: Vec::new(),
            params,
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.metadata.push((key.to_string(), value.into()));
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, self.metadata.len() as u32);
        for (k, v) in &self.metadata {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        put_u32(&mut out, self.params.len() as u32);
        for p in self.params.iter() {
            put_str(&mut out, &p.name);
            out.push(p.decay as u8);
            out.push(match S::PRECISION {
                Precision::Single => 0,
                Precision::Double => 1,
            });
            put_u32(&mut out, p.value.shape().len() as u32);
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in p.value.data() {
                x.write_le(&mut out);
            }
        }
        out
    }

    /// Parses a checkpoint. Values stored at the other precision are converted.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::schema(None, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::schema(None, alloc::format!("unsupported checkpoint version {version}")));
        }
        let n_meta = r.u32()?;
        let mut metadata = Vec::new();
        for _ in 0..n_meta {
            let k = r.string()?;
            let v = r.string()?;
            metadata.push((k, v));
        }
        let n_params = r.u32()?;
        let mut params = ParamStore::new();
        for _ in 0..n_params {
            let name = r.string()?;
            let decay = r.take(1)?[0] != 0;
            let precision = match r.take(1)?[0] {
                0 => Precision::Single,
                1 => Precision::Double,
                other => return Err(Error::schema(None, alloc::format!("unknown precision tag {other}"))),
            };
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                b.copy_from_slice(r.take(8)?);
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let w = precision.byte_width();
            let raw = r.take(n.checked_mul(w).ok_or_else(|| Error::schema(None, "tensor too large"))?)?;
            let data = raw
                .chunks(w)
                .map(|c| match precision {
                    Precision::Single => S::from_f64(f32::read_le(c) as f64),
                    Precision::Double => S::from_f64(f64::read_le(c)),
                })
                .collect();
            params.insert(&name, Tensor::new(shape, data)?, decay);
        }
        if r.pos != bytes.len() {
            return Err(Error::schema(None, "trailing bytes after checkpoint"));
        }
        Ok(Checkpoint { metadata, params })
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::schema(None, "truncated checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        b.copy_from_slice(self.take(4)?);
        Ok(u32::from_le_bytes(b))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        core::str::from_utf8(raw)
            .map(ToString::to_string)
            .map_err(|_| Error::schema(None, "invalid utf-8 in checkpoint"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Init;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_store(seed: u64) -> ParamStore<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        s.add("enc.w", &[3, 5], Init::Normal, &mut rng);
        s.add("enc.b", &[5], Init::Zeros, &mut rng);
        s.add("ln.gain", &[5], Init::Ones, &mut rng);
        s
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::<f32>::decode(b"nope").is_err());
        let mut bytes = Checkpoint::new(sample_store(1)).encode();
        bytes.push(0);
        assert!(Checkpoint::<f32>::decode(&bytes).is_err());
        bytes.truncate(bytes.len() - 3);
        assert!(Checkpoint::<f32>::decode(&bytes).is_err());
    }

    #[test]
    fn reads_across_precision() {
        let ck = Checkpoint::new(sample_store(2));
        let wide = Checkpoint::<f64>::decode(&ck.encode()).unwrap();
        assert_eq!(wide.params.value(wide.params.find("enc.w").unwrap()), &ck.params.value(ck.params.find("enc.w").unwrap()).cast::<f64>());
    }

    proptest! {
        #[test]
        fn save_load_save_is_byte_identical(seed in any::<u64>(), key in "[a-z]{0,8}", val in ".{0,20}") {
            let ck = Checkpoint::new(sample_store(seed)).with_meta(&key, val);
            let bytes = ck.encode();
            let back = Checkpoint::<f32>::decode(&bytes).unwrap();
            prop_assert_eq!(&back, &ck);
            prop_assert_eq!(back.encode(), bytes);
        }
    }
}
