//! `.drsan` checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic       8 bytes  "DRSANCKP"
//! version     u32      FORMAT_VERSION
//! config      u32 length + UTF-8 JSON of NetworkConfig
//! iteration   u64
//! params      u32 count, then `count` blobs
//! optimizer   u8 flag; when 1: u64 step, u32 count + m blobs, u32 count + v blobs
//!
//! blob        u32 name length, UTF-8 name, 4 x u32 dims, f32 values
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::config::NetworkConfig;
use crate::model::network::Model;
use crate::model::params::ParameterStore;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 8] = b"DRSANCKP";
pub const FORMAT_VERSION: u32 = 1;

/// Adam moments keyed by parameter name, plus the step counter `t`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState<T = f32> {
    pub step: u64,
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub iteration: u64,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn new(model: Model<f32>) -> Self {
        Checkpoint {
            model,
            iteration: 0,
            optimizer: None,
        }
    }

    /// Copies parameters into an existing model, failing on the first name or
    /// shape that does not match.
    pub fn restore_into(&self, model: &mut Model<f32>) -> Result<()> {
        for (name, p) in self.model.params().iter() {
            let target = model
                .params()
                .get(name)
                .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
            if target.value.shape() != p.value.shape() {
                return Err(Error::ParameterShape {
                    name: name.to_string(),
                    found: p.value.shape().dims(),
                    expected: target.value.shape().dims(),
                });
            }
        }
        if let Some(missing) = model.params().names().find(|n| !self.model.params().contains(n)) {
            return Err(Error::MissingParameter(missing.to_string()));
        }
        let src = self.model.params();
        model.params_mut().map_values(|name, v| *v = src.value(name).clone());
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_blob(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    for d in t.shape().dims() {
        put_u32(out, d as u32);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    let cfg = ckpt.model.config().to_json();
    put_u32(&mut out, cfg.len() as u32);
    out.extend_from_slice(cfg.as_bytes());
    out.extend_from_slice(&ckpt.iteration.to_le_bytes());
    let params = ckpt.model.params();
    put_u32(&mut out, params.len() as u32);
    for (name, p) in params.iter() {
        put_blob(&mut out, name, &p.value);
    }
    match &ckpt.optimizer {
        None => out.push(0),
        Some(opt) => {
            out.push(1);
            out.extend_from_slice(&opt.step.to_le_bytes());
            for moments in [&opt.m, &opt.v] {
                put_u32(&mut out, moments.len() as u32);
                for (name, t) in moments {
                    put_blob(&mut out, name, t);
                }
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &'static str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Corrupt(format!("{what} is not valid UTF-8")))
    }

    fn blob(&mut self) -> Result<(String, Tensor<f32>)> {
        let name = self.string("blob name")?;
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = self.u32("blob shape")? as usize;
        }
        let shape = Shape::from_dims(dims);
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Corrupt(format!("blob `{name}` has absurd shape {dims:?}")))?;
        let raw = self.take(numel, "blob data")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        Ok((name, Tensor::from_vec(shape, data)?))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if bytes.len() < MAGIC.len() {
        return Err(Error::Truncated("magic"));
    }
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let config = NetworkConfig::from_json(&r.string("config")?)?;
    let iteration = r.u64("iteration")?;
    let count = r.u32("parameter count")?;
    let mut params = ParameterStore::new();
    for _ in 0..count {
        let (name, t) = r.blob()?;
        params.insert(name, t)?;
    }
    let optimizer = match r.u8("optimizer flag")? {
        0 => None,
        1 => {
            let step = r.u64("optimizer step")?;
            let mut moments = [BTreeMap::new(), BTreeMap::new()];
            for m in &mut moments {
                let n = r.u32("moment count")?;
                for _ in 0..n {
                    let (name, t) = r.blob()?;
                    m.insert(name, t);
                }
            }
            let [m, v] = moments;
            Some(OptimizerState { step, m, v })
        }
        other => return Err(Error::Corrupt(format!("optimizer flag {other}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let model = Model::from_parts(config, params)?;
    Ok(Checkpoint {
        model,
        iteration,
        optimizer,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
