//! Named parameter storage, initialisation and checkpoint files.
//!
//! Checkpoint layout (`params.bin`), repeated per parameter in insertion order:
//!
//! ```text
//! u32 name_len | name (UTF-8) | u32 ndim | u64 dim × ndim | u64 count | f64 × count
//! ```
//!
//! All integers and floats are little-endian. A sibling `manifest.json` lists
//! each parameter's name, shape, element count and the byte offset of its
//! first float in `params.bin`.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CheckpointError, Error, Result};
use crate::tensor::{DiffTensor, Tape, Var};

pub const CHECKPOINT_FILE: &str = "params.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, DiffTensor>,
}

/// Gradient of a scalar loss with respect to named parameters.
pub type Gradients = IndexMap<String, Vec<f64>>;

/// `true` when `name` equals `key` or lies under it as a dotted prefix.
pub fn name_matches(name: &str, key: &str) -> bool {
    name == key
        || (name.len() > key.len() && name.starts_with(key) && name.as_bytes()[key.len()] == b'.')
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: DiffTensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(CheckpointError::Duplicate(name).into());
        }
        self.params.insert(name, t.with_requires_grad(true));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&DiffTensor> {
        self.params.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&DiffTensor> {
        self.get(name)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()).into())
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut DiffTensor> {
        self.params.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DiffTensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn numel(&self) -> usize {
        self.params.values().map(DiffTensor::numel).sum()
    }

    /// Parameters whose names fall under `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(k, _)| name_matches(k, prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn extend(&mut self, other: ParamStore) -> Result<()> {
        for (k, v) in other.params {
            self.insert(k, v)?;
        }
        Ok(())
    }

    /// Overwrites the values of every parameter in `other`, which must
    /// already exist here with the same shape.
    pub fn assign_from(&mut self, other: &ParamStore) -> Result<()> {
        for (k, v) in &other.params {
            let t = self
                .params
                .get_mut(k)
                .ok_or_else(|| CheckpointError::Missing(k.clone()))?;
            if t.shape() != v.shape() {
                return Err(Error::shape(
                    "assign_from",
                    format!("{k} {:?}", t.shape()),
                    format!("{:?}", v.shape()),
                ));
            }
            t.value_mut().copy_from_slice(v.value());
        }
        Ok(())
    }

    pub fn remove_prefix(&mut self, prefix: &str) {
        self.params.retain(|k, _| !name_matches(k, prefix));
    }

    /// FNV-1a over names, shapes and value bits of parameters under `prefix`
    /// (all parameters for `""`).
    pub fn checksum(&self, prefix: &str) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(PRIME);
            }
        };
        for (k, v) in &self.params {
            if !prefix.is_empty() && !name_matches(k, prefix) {
                continue;
            }
            eat(k.as_bytes());
            for d in v.shape() {
                eat(&(*d as u64).to_le_bytes());
            }
            for x in v.value() {
                eat(&x.to_bits().to_le_bytes());
            }
        }
        h
    }

    /// Records every parameter as a tape leaf. Parameters for which
    /// `trainable` returns `false` become constants.
    pub fn bind(&self, tape: &mut Tape, trainable: impl Fn(&str) -> bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, v)| {
                let var = if trainable(k) {
                    tape.variable(v.clone())
                } else {
                    tape.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }

    pub fn write_checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (bytes, manifest) = self.encode();
        let bin = dir.join(CHECKPOINT_FILE);
        fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
        let man = dir.join(MANIFEST_FILE);
        let text =
            serde_json::to_string_pretty(&manifest).map_err(|e| Error::Serde(e.to_string()))?;
        fs::write(&man, text).map_err(|e| Error::io(&man, e))?;
        Ok(())
    }

    pub fn read_checkpoint(dir: &Path) -> Result<Self> {
        let bin = dir.join(CHECKPOINT_FILE);
        let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        Ok(Self::decode(&bytes)?)
    }

    pub fn encode(&self) -> (Vec<u8>, Vec<ManifestEntry>) {
        let mut out = Vec::new();
        let mut manifest = Vec::with_capacity(self.params.len());
        for (k, v) in &self.params {
            out.extend_from_slice(&(k.len() as u32).to_le_bytes());
            out.extend_from_slice(k.as_bytes());
            out.extend_from_slice(&(v.shape().len() as u32).to_le_bytes());
            for d in v.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            out.extend_from_slice(&(v.numel() as u64).to_le_bytes());
            manifest.push(ManifestEntry {
                name: k.clone(),
                shape: v.shape().to_vec(),
                count: v.numel(),
                offset: out.len() as u64,
            });
            for x in v.value() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        (out, manifest)
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, CheckpointError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let mut store = ParamStore::new();
        while cur.pos < bytes.len() {
            let start = cur.pos;
            let n = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(n)?)
                .map_err(|_| CheckpointError::BadName(start))?
                .to_string();
            let ndim = cur.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| cur.u64().map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let count = cur.u64()? as usize;
            if shape.iter().product::<usize>() != count {
                return Err(CheckpointError::CountMismatch { name, shape, count });
            }
            let raw = cur.take(count.checked_mul(8).ok_or(CheckpointError::Truncated(cur.pos))?)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = DiffTensor::new(&shape, values).expect("count checked");
            if store.params.contains_key(&name) {
                return Err(CheckpointError::Duplicate(name));
            }
            store.params.insert(name, t.with_requires_grad(true));
        }
        Ok(store)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: usize,
    /// Byte offset of the first value in `params.bin`.
    pub offset: u64,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated(self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Parameter leaves recorded on one tape.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl FromIterator<(String, Var)> for Bound {
    fn from_iter<I: IntoIterator<Item = (String, Var)>>(iter: I) -> Self {
        Self {
            vars: iter.into_iter().collect(),
        }
    }
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| CheckpointError::Missing(name.to_string()).into())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Gradients of every trainable bound parameter after `tape.backward`.
    pub fn gradients(&self, tape: &Tape) -> Gradients {
        self.vars
            .iter()
            .filter(|(_, v)| tape.requires_grad(**v))
            .map(|(k, v)| (k.clone(), tape.grad(*v).to_vec()))
            .collect()
    }
}

/// Kaiming-uniform (fan-in, ReLU gain) initialisation: `U(−√(6/fan_in), √(6/fan_in))`.
pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> DiffTensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let v = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    DiffTensor::new(shape, v).expect("shape and count agree")
}
