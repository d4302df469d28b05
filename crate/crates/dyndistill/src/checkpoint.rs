//! Checkpoints: a flat, versioned map from parameter path (for example
//! `student.encoder.layer0.weight`) to shape plus row-major f64 values, with
//! the training configuration embedded as a JSON blob. Round-trips are
//! bit-exact.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! offset  size  field
//! 0       6     magic "DDCKP\0"
//! 6       2     version (u16) = 1
//! 8       4     config JSON byte length (u32, 0 = absent)
//! 12      ...   config JSON
//! ...     4     entry count (u32)
//! per entry:
//!         2     path length (u16) + utf-8 path
//!         1     rank (u8) + rank x u64 dims
//!         numel x f64 values
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ClassifierHead, Encoder, Linear, Network, StudentTeacherPair};
use crate::tensor::Tensor;
use crate::util::{atomic_write, ByteReader};

const MAGIC: &[u8; 6] = b"DDCKP\0";
const VERSION: u16 = 1;

/// An in-memory checkpoint. Parameter paths are ordered (BTreeMap) so the
/// serialized form is canonical.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_json: Option<String>,
    pub params: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new(config_json: Option<String>) -> Checkpoint {
        Checkpoint {
            config_json,
            params: BTreeMap::new(),
        }
    }

    pub fn insert_entries(&mut self, entries: Vec<(String, Tensor)>) {
        for (path, tensor) in entries {
            self.params.insert(path, (tensor.shape(), tensor.data()));
        }
    }

    pub fn from_network(network: &Network, config_json: Option<String>) -> Checkpoint {
        let mut ck = Checkpoint::new(config_json);
        ck.insert_entries(network.param_entries());
        ck
    }

    pub fn from_pair(pair: &StudentTeacherPair, config_json: Option<String>) -> Checkpoint {
        let mut ck = Checkpoint::new(config_json);
        ck.insert_entries(pair.param_entries());
        ck
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path)?;
        Self::decode(&bytes)
    }

    fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let config = self.config_json.as_deref().unwrap_or("");
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (path, (shape, values)) in &self.params {
            let plen = u16::try_from(path.len())
                .map_err(|_| Error::Checkpoint(format!("path too long: {path}")))?;
            out.extend_from_slice(&plen.to_le_bytes());
            out.extend_from_slice(path.as_bytes());
            out.push(shape.len() as u8);
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    fn decode(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = ByteReader::new(bytes);
        if r.take(6, "magic")? != MAGIC {
            return Err(Error::parse(0, "bad magic bytes, not a checkpoint"));
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(Error::parse(6, format!("unsupported version {version}")));
        }
        let config_len = r.u32("config length")? as usize;
        let config_json = if config_len == 0 {
            None
        } else {
            let raw = r.take(config_len, "config json")?;
            Some(
                std::str::from_utf8(raw)
                    .map_err(|_| Error::parse(12, "config is not utf-8"))?
                    .to_string(),
            )
        };
        let n_entries = r.u32("entry count")? as usize;
        let mut params = BTreeMap::new();
        for _ in 0..n_entries {
            let plen = r.u16("path length")? as usize;
            let praw = r.take(plen, "path")?;
            let path = std::str::from_utf8(praw)
                .map_err(|_| Error::parse(r.pos(), "path is not utf-8"))?
                .to_string();
            let rank = r.u8("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64("dim")? as usize);
            }
            let numel: usize = shape.iter().product();
            let values = r.f64_vec(numel, "values")?;
            params.insert(path, (shape, values));
        }
        r.expect_end()?;
        Ok(Checkpoint {
            config_json,
            params,
        })
    }

    /// Rebuild a network from the entries under `prefix` (for example
    /// `student` or `teacher`; empty string for unprefixed entries).
    pub fn network(&self, prefix: &str) -> Result<Network> {
        let full = |name: &str| {
            if prefix.is_empty() {
                name.to_string()
            } else {
                format!("{prefix}.{name}")
            }
        };
        let mut layers = Vec::new();
        let mut i = 0;
        loop {
            let wkey = full(&format!("encoder.layer{i}.weight"));
            let bkey = full(&format!("encoder.layer{i}.bias"));
            match (self.params.get(&wkey), self.params.get(&bkey)) {
                (Some((ws, wv)), Some((_, bv))) => {
                    if ws.len() != 2 {
                        return Err(Error::Checkpoint(format!("{wkey} is not a matrix")));
                    }
                    layers.push(Linear::from_values(ws[0], ws[1], wv.clone(), bv.clone())?);
                    i += 1;
                }
                (None, None) if i > 0 => break,
                _ => {
                    return Err(Error::Checkpoint(format!(
                        "missing encoder layer {i} under prefix {prefix:?}"
                    )))
                }
            }
        }
        let (ws, wv) = self
            .params
            .get(&full("head.weight"))
            .ok_or_else(|| Error::Checkpoint(format!("missing head under prefix {prefix:?}")))?;
        let (_, bv) = self
            .params
            .get(&full("head.bias"))
            .ok_or_else(|| Error::Checkpoint("missing head bias".to_string()))?;
        Ok(Network {
            encoder: Encoder::from_layers(layers)?,
            head: ClassifierHead {
                linear: Linear::from_values(ws[0], ws[1], wv.clone(), bv.clone())?,
            },
        })
    }

    /// Prefixes that look like complete networks in this checkpoint.
    pub fn network_prefixes(&self) -> Vec<String> {
        let mut out = Vec::new();
        for candidate in ["student", "teacher", ""] {
            let key = if candidate.is_empty() {
                "head.weight".to_string()
            } else {
                format!("{candidate}.head.weight")
            };
            if self.params.contains_key(&key) {
                out.push(candidate.to_string());
            }
        }
        out
    }
}
