//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "RIPF" | version: u32 | config hash: [u8; 32]
//! section*: name_len: u16 | name | payload_len: u64 | payload
//! ```
//!
//! Sections appear in the order `config`, `state`, `ripmaps`, `mlp`,
//! `moments`, `occupancy`, `rng`. Floats are stored as `f64` bit patterns,
//! so a round trip is exact.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::optim::Moments;
use crate::field::mlp::{Dense, MlpParams};
use crate::field::FieldConfig;
use crate::ripmap::FeatureGrid;

pub const MAGIC: &[u8; 4] = b"RIPF";
pub const VERSION: u32 = 1;
pub const SECTIONS: [&str; 7] = ["config", "state", "ripmaps", "mlp", "moments", "occupancy", "rng"];

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error at {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint was written for a different field configuration")]
    ConfigMismatch,
    #[error("checkpoint truncated in section `{0}`")]
    Truncated(String),
    #[error("corrupt section `{section}`: {msg}")]
    Corrupt { section: String, msg: String },
}

/// Hash identifying a field architecture.
pub fn config_hash(cfg: &FieldConfig) -> [u8; 32] {
    let json = serde_json::to_vec(cfg).expect("serializable");
    Sha256::digest(&json).into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyState {
    pub resolution: u64,
    pub radius: f64,
    pub occupied: Vec<bool>,
    pub cache: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

/// Everything needed to resume training bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// JSON object with at least `field`, `train` and `render` keys.
    pub config_json: String,
    pub field_config: FieldConfig,
    pub iteration: u64,
    pub batch_rays: u64,
    pub ripmaps: Vec<FeatureGrid>,
    pub mlp: MlpParams,
    pub moments: Vec<Moments>,
    pub occupancy: OccupancyState,
    pub rng: RngState,
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    section: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.data.len() < n {
            return Err(CheckpointError::Truncated(self.section.to_string()));
        }
        let (head, tail) = self.data.split_at(n);
        self.data = tail;
        Ok(head)
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, elem: usize) -> Result<usize, CheckpointError> {
        let n = self.u64()? as usize;
        if n.checked_mul(elem).is_none_or(|b| b > self.data.len()) {
            return Err(CheckpointError::Truncated(self.section.to_string()));
        }
        Ok(n)
    }

    fn f64s(&mut self) -> Result<Vec<f64>, CheckpointError> {
        let n = self.len(8)?;
        Ok(self.take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn corrupt(&self, msg: impl Into<String>) -> CheckpointError {
        CheckpointError::Corrupt { section: self.section.to_string(), msg: msg.into() }
    }

    fn finish(&self) -> Result<(), CheckpointError> {
        if self.data.is_empty() {
            Ok(())
        } else {
            Err(self.corrupt("trailing bytes"))
        }
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&config_hash(&self.field_config));
        for (name, payload) in SECTIONS.iter().zip(self.section_payloads()) {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        out
    }

    /// Bytes of the learnable-parameter sections (ripmaps and MLP).
    pub fn model_size_bytes(&self) -> usize {
        let p = self.section_payloads();
        p[2].len() + p[3].len()
    }

    fn section_payloads(&self) -> Vec<Vec<u8>> {
        let config = self.config_json.as_bytes().to_vec();

        let mut state = Writer::default();
        state.u64(self.iteration);
        state.u64(self.batch_rays);

        let mut rip = Writer::default();
        rip.u64(self.ripmaps.len() as u64);
        for g in &self.ripmaps {
            rip.u64(g.height() as u64);
            rip.u64(g.width() as u64);
            rip.u64(g.channels() as u64);
            rip.f64s(g.values());
        }

        let mut mlp = Writer::default();
        mlp.u64(self.mlp.layers.len() as u64);
        for l in &self.mlp.layers {
            mlp.u64(l.outputs() as u64);
            mlp.u64(l.inputs() as u64);
            mlp.f64s(l.weight.as_slice().expect("standard layout"));
            mlp.f64s(l.bias.as_slice().expect("standard layout"));
        }

        let mut mom = Writer::default();
        mom.u64(self.moments.len() as u64);
        for m in &self.moments {
            mom.f64s(&m.m);
            mom.f64s(&m.v);
        }

        let mut occ = Writer::default();
        occ.u64(self.occupancy.resolution);
        occ.buf.extend_from_slice(&self.occupancy.radius.to_le_bytes());
        occ.u64(self.occupancy.occupied.len() as u64);
        occ.buf.extend(self.occupancy.occupied.iter().map(|&b| b as u8));
        occ.f64s(&self.occupancy.cache);

        let mut rng = Vec::with_capacity(56);
        rng.extend_from_slice(&self.rng.seed);
        rng.extend_from_slice(&self.rng.stream.to_le_bytes());
        rng.extend_from_slice(&self.rng.word_pos.to_le_bytes());

        vec![config, state.buf, rip.buf, mlp.buf, mom.buf, occ.buf, rng]
    }

    /// Parse a checkpoint; when `expected` is given, its hash must match.
    pub fn from_bytes(bytes: &[u8], expected: Option<&FieldConfig>) -> Result<Self, CheckpointError> {
        let mut head = Reader { data: bytes, section: "header" };
        if head.take(4).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(head.take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let hash: [u8; 32] = head.take(32)?.try_into().expect("32 bytes");
        if let Some(cfg) = expected {
            if config_hash(cfg) != hash {
                return Err(CheckpointError::ConfigMismatch);
            }
        }

        let mut payloads: Vec<&[u8]> = Vec::with_capacity(SECTIONS.len());
        for name in SECTIONS {
            let mut r = Reader { data: head.data, section: name };
            let n = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
            if r.take(n)? != name.as_bytes() {
                return Err(r.corrupt("unexpected section name"));
            }
            let len = r.u64()? as usize;
            payloads.push(r.take(len)?);
            head.data = r.data;
        }
        if !head.data.is_empty() {
            return Err(CheckpointError::Corrupt { section: "rng".into(), msg: "trailing bytes after last section".into() });
        }

        let config_json = std::str::from_utf8(payloads[0])
            .map_err(|e| CheckpointError::Corrupt { section: "config".into(), msg: e.to_string() })?
            .to_string();
        let field_config = parse_field_config(&config_json)?;
        if config_hash(&field_config) != hash {
            return Err(CheckpointError::Corrupt { section: "config".into(), msg: "config does not match header hash".into() });
        }

        let mut r = Reader { data: payloads[1], section: "state" };
        let iteration = r.u64()?;
        let batch_rays = r.u64()?;
        r.finish()?;

        let mut r = Reader { data: payloads[2], section: "ripmaps" };
        let n = r.len(24)?;
        let mut ripmaps = Vec::with_capacity(n);
        for _ in 0..n {
            let (h, w, c) = (r.u64()? as usize, r.u64()? as usize, r.u64()? as usize);
            let values = r.f64s()?;
            ripmaps.push(FeatureGrid::from_values(h, w, c, values).map_err(|e| r.corrupt(e.to_string()))?);
        }
        r.finish()?;

        let mut r = Reader { data: payloads[3], section: "mlp" };
        let n = r.len(16)?;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let (out, inp) = (r.u64()? as usize, r.u64()? as usize);
            let w = r.f64s()?;
            let b = r.f64s()?;
            let weight = Array2::from_shape_vec((out, inp), w).map_err(|e| r.corrupt(e.to_string()))?;
            if b.len() != out {
                return Err(r.corrupt("bias length"));
            }
            layers.push(Dense { weight, bias: Array1::from(b) });
        }
        r.finish()?;
        let mlp = MlpParams { layers };

        let mut r = Reader { data: payloads[4], section: "moments" };
        let n = r.len(16)?;
        let mut moments = Vec::with_capacity(n);
        for _ in 0..n {
            let m = r.f64s()?;
            let v = r.f64s()?;
            if m.len() != v.len() {
                return Err(r.corrupt("moment buffers differ in length"));
            }
            moments.push(Moments { m, v });
        }
        r.finish()?;

        let mut r = Reader { data: payloads[5], section: "occupancy" };
        let resolution = r.u64()?;
        let radius = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let n = r.len(1)?;
        let occupied = r.take(n)?.iter().map(|&b| b != 0).collect();
        let cache = r.f64s()?;
        r.finish()?;
        let occupancy = OccupancyState { resolution, radius, occupied, cache };

        let mut r = Reader { data: payloads[6], section: "rng" };
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        r.finish()?;

        Ok(Self {
            config_json,
            field_config,
            iteration,
            batch_rays,
            ripmaps,
            mlp,
            moments,
            occupancy,
            rng: RngState { seed, stream, word_pos },
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path, expected: Option<&FieldConfig>) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&bytes, expected)
    }
}

fn parse_field_config(json: &str) -> Result<FieldConfig, CheckpointError> {
    let corrupt = |msg: String| CheckpointError::Corrupt { section: "config".into(), msg };
    let value: serde_json::Value = serde_json::from_str(json).map_err(|e| corrupt(e.to_string()))?;
    let field = value.get("field").cloned().ok_or_else(|| corrupt("missing `field` key".into()))?;
    serde_json::from_value(field).map_err(|e| corrupt(e.to_string()))
}
