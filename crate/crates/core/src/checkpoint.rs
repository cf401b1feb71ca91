//! Self-describing binary checkpoint container.
//!
//! Layout: the 8-byte magic `VELABCK1`, a little-endian u64 header length,
//! a JSON header, then every array listed in the header as little-endian
//! f64 values in header order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, GradientBuffer, LrSchedule, MlpNetwork, MlpSpec};
use crate::rng::{RngPosition, RngStream};

pub const MAGIC: &[u8; 8] = b"VELABCK1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub step: u64,
    pub config: AdamConfig,
    pub schedule: LrSchedule,
    pub total_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub kind: String,
    pub config_hash: String,
    pub iteration: u64,
    pub networks: BTreeMap<String, MlpSpec>,
    pub optimizers: BTreeMap<String, OptimizerMeta>,
    pub rng: BTreeMap<String, RngPosition>,
    pub arrays: Vec<ArrayEntry>,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    arrays: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn new(kind: &str, config_hash: &str, iteration: u64) -> Self {
        Self {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                kind: kind.to_string(),
                config_hash: config_hash.to_string(),
                iteration,
                networks: BTreeMap::new(),
                optimizers: BTreeMap::new(),
                rng: BTreeMap::new(),
                arrays: Vec::new(),
                extra: BTreeMap::new(),
            },
            arrays: Vec::new(),
        }
    }

    pub fn push_array(&mut self, name: &str, values: Vec<f64>) {
        self.header.arrays.push(ArrayEntry {
            name: name.to_string(),
            len: values.len(),
        });
        self.arrays.push(values);
    }

    pub fn array(&self, name: &str) -> Result<&[f64]> {
        self.header
            .arrays
            .iter()
            .position(|e| e.name == name)
            .map(|i| self.arrays[i].as_slice())
            .ok_or_else(|| Error::InvalidArgument(format!("checkpoint has no array {name:?}")))
    }

    pub fn add_network(&mut self, name: &str, net: &MlpNetwork) {
        self.header.networks.insert(name.to_string(), net.spec());
        self.push_array(&format!("{name}.params"), net.params_flat());
    }

    pub fn network(&self, name: &str) -> Result<MlpNetwork> {
        let spec =
            self.header.networks.get(name).ok_or_else(|| {
                Error::InvalidArgument(format!("checkpoint has no network {name:?}"))
            })?;
        let mut net = MlpNetwork::zeros(*spec)?;
        net.set_params_flat(self.array(&format!("{name}.params"))?)?;
        Ok(net)
    }

    pub fn add_optimizer(&mut self, name: &str, state: &AdamState) {
        self.header.optimizers.insert(
            name.to_string(),
            OptimizerMeta {
                step: state.step,
                config: state.config,
                schedule: state.schedule,
                total_steps: state.total_steps,
            },
        );
        self.push_array(&format!("{name}.m"), state.m.to_flat());
        self.push_array(&format!("{name}.v"), state.v.to_flat());
    }

    pub fn optimizer(&self, name: &str, net: &MlpNetwork) -> Result<AdamState> {
        let meta = self.header.optimizers.get(name).ok_or_else(|| {
            Error::InvalidArgument(format!("checkpoint has no optimizer {name:?}"))
        })?;
        let fill = |flat: &[f64]| -> Result<GradientBuffer> {
            let mut g = GradientBuffer::zeros_like(net);
            if flat.len() != net.parameter_count() {
                return Err(Error::shape(
                    "Checkpoint::optimizer",
                    net.parameter_count(),
                    flat.len(),
                ));
            }
            for (d, s) in g.values_mut().zip(flat) {
                *d = *s;
            }
            Ok(g)
        };
        Ok(AdamState {
            m: fill(self.array(&format!("{name}.m"))?)?,
            v: fill(self.array(&format!("{name}.v"))?)?,
            step: meta.step,
            config: meta.config,
            schedule: meta.schedule,
            total_steps: meta.total_steps,
        })
    }

    pub fn add_rng(&mut self, stream: &RngStream) {
        self.header
            .rng
            .insert(stream.name().to_string(), stream.position());
    }

    pub fn rng(&self, name: &str) -> Result<RngStream> {
        self.header
            .rng
            .get(name)
            .and_then(RngStream::from_position)
            .ok_or_else(|| Error::InvalidArgument(format!("checkpoint has no rng stream {name:?}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let payload: usize = self.arrays.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(16 + header.len() + 8 * payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for a in &self.arrays {
            for v in a {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |message: &str| Error::Format {
            kind: "checkpoint",
            path: path.to_path_buf(),
            message: message.to_string(),
        };
        let header = Self::parse_header(bytes, path)?;
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let mut off = 16 + hlen;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for e in &header.arrays {
            let end = off
                .checked_add(8 * e.len)
                .filter(|&end| end <= bytes.len())
                .ok_or_else(|| bad("payload shorter than header declares"))?;
            let a = bytes[off..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            arrays.push(a);
            off = end;
        }
        if off != bytes.len() {
            return Err(bad("trailing bytes after payload"));
        }
        Ok(Self { header, arrays })
    }

    /// Reads only the header; used by `describe-checkpoint`.
    pub fn parse_header(bytes: &[u8], path: &Path) -> Result<CheckpointHeader> {
        let bad = |message: String| Error::Format {
            kind: "checkpoint",
            path: path.to_path_buf(),
            message,
        };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing VELABCK1 magic".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let end = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("header length exceeds file size".into()))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[16..end]).map_err(|e| bad(e.to_string()))?;
        if header.format_version != FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        Ok(header)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // write-then-rename so an interrupted save never clobbers the last good file
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
