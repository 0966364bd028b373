//! Binary checkpoint container shared by auto-encoder and PCA models.
//!
//! Layout (little-endian):
//!
//! ```text
//! "RLAECKPT" | u32 version | str kind
//! u32 n_meta  { str key | str value }*
//! u32 n_block { str name | u64 rows | u64 cols | f64 × rows·cols }*
//! ```
//! where `str` is a `u32` byte length followed by UTF-8 bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{AeConfig, AeParams, Autoencoder, BLOCK_NAMES};

pub const MAGIC: &[u8; 8] = b"RLAECKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    /// Ordered key/value metadata.
    pub meta: Vec<(String, String)>,
    pub blocks: Vec<(String, Matrix)>,
}

impl Container {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            meta: Vec::new(),
            blocks: Vec::new(),
        }
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.meta.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.meta.push((key, value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require_meta(&self, key: &str) -> Result<&str> {
        self.meta(key)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks metadata key {key:?}")))
    }

    pub fn parse_meta<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require_meta(key)?;
        raw.parse()
            .map_err(|_| Error::Format(format!("metadata {key}={raw:?} is malformed")))
    }

    pub fn push_block(&mut self, name: impl Into<String>, m: Matrix) {
        self.blocks.push((name.into(), m));
    }

    pub fn block(&self, name: &str) -> Result<&Matrix> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks block {name:?}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for (name, m) in &self.blocks {
            put_str(&mut out, name);
            out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let kind = r.string()?;
        let n_meta = r.u32()?;
        let mut meta = Vec::new();
        for _ in 0..n_meta {
            let k = r.string()?;
            let v = r.string()?;
            meta.push((k, v));
        }
        let n_blocks = r.u32()?;
        let mut blocks = Vec::new();
        for _ in 0..n_blocks {
            let name = r.string()?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let count = rows.checked_mul(cols).ok_or_else(|| {
                Error::Format(format!("block {name}: {rows}x{cols} overflows"))
            })?;
            let raw = r.take(count.checked_mul(8).unwrap_or(usize::MAX))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            blocks.push((name, Matrix::from_vec(rows, cols, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { kind, meta, blocks })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Length {
                context: "checkpoint".into(),
                expected: self.pos.saturating_add(n),
                found: self.bytes.len(),
            }),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
    }
}

pub const AE_KIND: &str = "autoencoder";

impl Autoencoder {
    /// Packs config, parameters and any extra metadata (dataset, schedule, ...).
    pub fn to_container(&self, extra: &[(String, String)]) -> Container {
        let mut c = Container::new(AE_KIND);
        c.set_meta("input_dim", self.config.input_dim);
        c.set_meta("hidden_dim", self.config.hidden_dim);
        c.set_meta("latent_dim", self.config.latent_dim);
        c.set_meta("output_activation", self.config.output_activation);
        c.set_meta("seed", self.config.seed);
        for (k, v) in extra {
            c.set_meta(k.clone(), v);
        }
        let p = &self.params;
        let vec_block = |v: &[f64]| Matrix::from_vec(1, v.len(), v.to_vec()).expect("row");
        c.push_block("enc_w1", p.enc_w1.clone());
        c.push_block("enc_b1", vec_block(&p.enc_b1));
        c.push_block("enc_w2", p.enc_w2.clone());
        c.push_block("enc_b2", vec_block(&p.enc_b2));
        c.push_block("dec_w1", p.dec_w1.clone());
        c.push_block("dec_b1", vec_block(&p.dec_b1));
        c.push_block("dec_w2", p.dec_w2.clone());
        c.push_block("dec_b2", vec_block(&p.dec_b2));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != AE_KIND {
            return Err(Error::Consistency(format!(
                "checkpoint holds a {:?} model, expected {AE_KIND:?}",
                c.kind
            )));
        }
        let config = AeConfig {
            input_dim: c.parse_meta("input_dim")?,
            hidden_dim: c.parse_meta("hidden_dim")?,
            latent_dim: c.parse_meta("latent_dim")?,
            output_activation: c.require_meta("output_activation")?.parse()?,
            seed: c.parse_meta("seed")?,
        };
        config.validate()?;
        let mut params = AeParams::zeros(&config);
        let expected: Vec<usize> = params.blocks().iter().map(|b| b.len()).collect();
        for ((name, slot), want) in BLOCK_NAMES.iter().zip(params.blocks_mut()).zip(expected) {
            let m = c.block(name)?;
            if m.as_slice().len() != want {
                return Err(Error::Consistency(format!(
                    "block {name} has {} values, config implies {want}",
                    m.as_slice().len()
                )));
            }
            slot.copy_from_slice(m.as_slice());
        }
        Ok(Self { config, params })
    }

    pub fn save(&self, path: impl AsRef<Path>, extra: &[(String, String)]) -> Result<()> {
        self.to_container(extra).save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Container)> {
        let c = Container::load(path)?;
        Ok((Self::from_container(&c)?, c))
    }
}
