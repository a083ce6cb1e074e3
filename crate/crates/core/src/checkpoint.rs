//! Binary checkpoints of trained models.
//!
//! Little-endian layout:
//!
//! ```text
//! "CPBW"            4 bytes
//! version           u16 (currently 1)
//! model kind        u8  (0 = weights, 1 = posterior)
//! split index       u32
//! layer count       u32
//! per layer         in_dim u32, out_dim u32, activation u8 (0 = relu, 1 = identity)
//! parameter count   u64
//! values            f64 x count (weights, or posterior mu)
//! rho               f64 x count (posterior only)
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayerSpec, NetworkSpec, ParamVector};
use crate::trainer::{Model, VariationalPosterior};

pub const MAGIC: &[u8; 4] = b"CPBW";
pub const VERSION: u16 = 1;

pub fn encode(spec: &NetworkSpec, model: &Model) -> Result<Vec<u8>> {
    let n = spec.num_params();
    if model.mean().len() != n {
        return Err(Error::Checkpoint(format!(
            "model has {} parameters, spec expects {n}",
            model.mean().len()
        )));
    }
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.push(u8::from(model.is_stochastic()));
    out.extend((spec.split_index() as u32).to_le_bytes());
    out.extend((spec.num_layers() as u32).to_le_bytes());
    for l in spec.layers() {
        out.extend((l.in_dim as u32).to_le_bytes());
        out.extend((l.out_dim as u32).to_le_bytes());
        out.push(match l.activation {
            Activation::Relu => 0,
            Activation::Identity => 1,
        });
    }
    out.extend((n as u64).to_le_bytes());
    for v in &model.mean().values {
        out.extend(v.to_le_bytes());
    }
    if let Model::Posterior(q) = model {
        for v in &q.rho {
            out.extend(v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let chunk = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(chunk)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<(NetworkSpec, Model)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Checkpoint("missing CPBW magic".into()));
    }
    let version = c.u16()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let kind = c.u8()?;
    if kind > 1 {
        return Err(Error::Checkpoint(format!("unknown model kind {kind}")));
    }
    let split = c.u32()?;
    let count = c.u32()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let in_dim = c.u32()?;
        let out_dim = c.u32()?;
        let activation = match c.u8()? {
            0 => Activation::Relu,
            1 => Activation::Identity,
            a => return Err(Error::Checkpoint(format!("unknown activation {a}"))),
        };
        layers.push(DenseLayerSpec {
            in_dim,
            out_dim,
            activation,
        });
    }
    let spec = NetworkSpec::new(layers, split)?;
    let n = c.u64()?;
    if n != spec.num_params() as u64 {
        return Err(Error::Checkpoint(format!(
            "{n} stored parameters, spec has {}",
            spec.num_params()
        )));
    }
    let mu = ParamVector::from_vec(&spec, c.f64s(n as usize)?)?;
    let model = if kind == 1 {
        Model::Posterior(VariationalPosterior::new(mu, c.f64s(n as usize)?)?)
    } else {
        Model::Params(mu)
    };
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok((spec, model))
}

pub fn save(path: impl AsRef<Path>, spec: &NetworkSpec, model: &Model) -> Result<()> {
    fs::write(path, encode(spec, model)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(NetworkSpec, Model)> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn spec() -> NetworkSpec {
        NetworkSpec::mlp(&[3, 4, 2], 2).unwrap()
    }

    #[test]
    fn weights_round_trip() {
        let s = spec();
        let p = ParamVector::init(&s, 0.3, &mut Rng::new(1, 0));
        let m = Model::Params(p);
        let (s2, m2) = decode(&encode(&s, &m).unwrap()).unwrap();
        assert_eq!(s2, s);
        assert_eq!(m2, m);
    }

    #[test]
    fn posterior_round_trip_through_file() {
        let s = spec();
        let q = VariationalPosterior::init(&s, 0.1, 0.02, &mut Rng::new(2, 0)).unwrap();
        let m = Model::Posterior(q);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cpbw");
        save(&path, &s, &m).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"CPBW");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), VERSION);
        assert_eq!(load(&path).unwrap(), (s, m));
    }

    #[test]
    fn corrupt_inputs_fail() {
        let s = spec();
        let m = Model::Params(ParamVector::zeros(&s));
        let good = encode(&s, &m).unwrap();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode(&bad_magic), Err(Error::Checkpoint(_))));
        assert!(matches!(decode(&good[..good.len() - 3]), Err(Error::Checkpoint(_))));
        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert!(matches!(decode(&bad_version), Err(Error::Checkpoint(_))));
    }
}
