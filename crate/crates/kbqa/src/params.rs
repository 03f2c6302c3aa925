//! Named parameter storage, checkpointing, and per-forward leaf bindings.
//!
//! A [`ParamStore`] owns the canonical f64 values of every model parameter
//! in registration order. Each forward pass opens a [`Binding`], which hands
//! out leaf [`Tensor`]s cloned from the store on first use; after backward,
//! [`Binding::grads`] collects gradients in store order (zeros for trainable
//! parameters the pass never touched). The optimizer then writes updated
//! values back into the store, so stale leaves never leak between steps.
//!
//! Checkpoints are a short text header (names, shapes, frozen flags) followed
//! by the raw little-endian f64 payload in header order, making save/load an
//! exact bit-for-bit round trip.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

const CHECKPOINT_MAGIC: &str = "KBQA-CKPT v1";

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("unknown parameter {0:?}")]
    Unknown(String),
    #[error("parameter {0:?} registered twice")]
    Duplicate(String),
    #[error("invalid parameter name {0:?}: names must be non-empty and contain no whitespace")]
    BadName(String),
    #[error("parameter {name:?}: shape {got:?} does not match expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("checkpoint does not list parameter {0:?}")]
    MissingInCheckpoint(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ParamError>;

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    /// Frozen parameters are excluded from gradients and optimizer updates
    /// (used for pretrained word embeddings).
    pub frozen: bool,
}

/// Ordered, named collection of model parameters.
#[derive(Debug, Default, Clone)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn register(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        data: Vec<f64>,
        frozen: bool,
    ) -> Result<()> {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(ParamError::BadName(name.to_string()));
        }
        if self.index.contains_key(name) {
            return Err(ParamError::Duplicate(name.to_string()));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(ParamError::ShapeMismatch {
                name: name.to_string(),
                expected: shape,
                got: vec![data.len()],
            });
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape,
            data,
            frozen,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Result<&ParamEntry> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| ParamError::Unknown(name.to_string()))
    }

    pub fn data_mut(&mut self, name: &str) -> Result<&mut Vec<f64>> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| ParamError::Unknown(name.to_string()))?;
        Ok(&mut self.entries[i].data)
    }

    /// Total number of scalar values across all parameters.
    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    /// Writes all parameters to `path`: a text header describing names,
    /// shapes, and frozen flags, then the values as little-endian f64 bytes
    /// in header order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{CHECKPOINT_MAGIC}")?;
        writeln!(w, "params {}", self.entries.len())?;
        for e in &self.entries {
            let dims: Vec<String> = e.shape.iter().map(|d| d.to_string()).collect();
            let kind = if e.frozen { "frozen" } else { "trainable" };
            writeln!(w, "param {} {} {}", e.name, kind, dims.join(" "))?;
        }
        writeln!(w, "data")?;
        for e in &self.entries {
            for v in &e.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a checkpoint written by [`ParamStore::save`].
    pub fn load(path: &Path) -> Result<ParamStore> {
        let mut r = BufReader::new(File::open(path)?);
        let mut line = String::new();

        r.read_line(&mut line)?;
        if line.trim_end() != CHECKPOINT_MAGIC {
            return Err(ParamError::Corrupt(format!(
                "bad magic line {:?}",
                line.trim_end()
            )));
        }
        line.clear();
        r.read_line(&mut line)?;
        let count: usize = line
            .trim_end()
            .strip_prefix("params ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ParamError::Corrupt(format!("bad params line {:?}", line.trim_end())))?;

        let mut store = ParamStore::new();
        let mut headers: Vec<(String, Vec<usize>, bool)> = Vec::with_capacity(count);
        for _ in 0..count {
            line.clear();
            r.read_line(&mut line)?;
            let mut fields = line.trim_end().split(' ');
            let (tag, name, kind) = (fields.next(), fields.next(), fields.next());
            if tag != Some("param") {
                return Err(ParamError::Corrupt(format!(
                    "expected param line, got {:?}",
                    line.trim_end()
                )));
            }
            let name = name
                .ok_or_else(|| ParamError::Corrupt("param line missing name".into()))?
                .to_string();
            let frozen = match kind {
                Some("frozen") => true,
                Some("trainable") => false,
                other => {
                    return Err(ParamError::Corrupt(format!(
                        "parameter {name:?} has unknown kind {other:?}"
                    )))
                }
            };
            let shape: Vec<usize> = fields
                .map(|d| {
                    d.parse()
                        .map_err(|_| ParamError::Corrupt(format!("bad dimension {d:?} for {name:?}")))
                })
                .collect::<Result<_>>()?;
            headers.push((name, shape, frozen));
        }
        line.clear();
        r.read_line(&mut line)?;
        if line.trim_end() != "data" {
            return Err(ParamError::Corrupt(format!(
                "expected data marker, got {:?}",
                line.trim_end()
            )));
        }
        for (name, shape, frozen) in headers {
            let numel: usize = shape.iter().product();
            let mut bytes = vec![0u8; numel * 8];
            r.read_exact(&mut bytes).map_err(|e| {
                ParamError::Corrupt(format!("payload truncated while reading {name:?}: {e}"))
            })?;
            let data: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            store.register(&name, shape, data, frozen)?;
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(ParamError::Corrupt("trailing bytes after payload".into()));
        }
        Ok(store)
    }

    /// Replaces this store's values with those from a checkpoint, requiring
    /// the same parameters with the same shapes.
    pub fn load_into(&mut self, path: &Path) -> Result<()> {
        let loaded = ParamStore::load(path)?;
        for e in &self.entries {
            let other = loaded
                .get(&e.name)
                .map_err(|_| ParamError::MissingInCheckpoint(e.name.clone()))?;
            if other.shape != e.shape {
                return Err(ParamError::ShapeMismatch {
                    name: e.name.clone(),
                    expected: e.shape.clone(),
                    got: other.shape.clone(),
                });
            }
        }
        if loaded.len() != self.len() {
            let extra = loaded
                .entries
                .iter()
                .find(|e| !self.index.contains_key(&e.name))
                .map(|e| e.name.clone())
                .unwrap_or_default();
            return Err(ParamError::Corrupt(format!(
                "checkpoint has {} parameters, store has {} (first extra: {extra:?})",
                loaded.len(),
                self.len()
            )));
        }
        for e in &mut self.entries {
            let other = loaded.get(&e.name).expect("checked above");
            e.data.clone_from(&other.data);
            e.frozen = other.frozen;
        }
        Ok(())
    }

    /// Opens a leaf binding for one forward/backward pass.
    pub fn bind(&self) -> Binding<'_> {
        Binding {
            store: self,
            leaves: RefCell::new(BTreeMap::new()),
        }
    }
}

/// Hands out autodiff leaves for store parameters, one per name per pass.
/// Repeated `get` calls return the same graph node, so gradient contributions
/// from every use site accumulate together.
pub struct Binding<'s> {
    store: &'s ParamStore,
    leaves: RefCell<BTreeMap<String, Tensor>>,
}

impl Binding<'_> {
    pub fn get(&self, name: &str) -> Result<Tensor> {
        if let Some(t) = self.leaves.borrow().get(name) {
            return Ok(t.clone());
        }
        let entry = self.store.get(name)?;
        let leaf = if entry.frozen {
            Tensor::from_vec(entry.shape.clone(), entry.data.clone())
        } else {
            Tensor::param(entry.shape.clone(), entry.data.clone())
        }
        .expect("store entries are shape-consistent");
        self.leaves
            .borrow_mut()
            .insert(name.to_string(), leaf.clone());
        Ok(leaf)
    }

    /// Gradients for every trainable parameter, in store registration order.
    /// Parameters this pass never used produce zero gradients.
    pub fn grads(&self) -> Vec<(String, Vec<f64>)> {
        let leaves = self.leaves.borrow();
        self.store
            .entries
            .iter()
            .filter(|e| !e.frozen)
            .map(|e| {
                let g = leaves
                    .get(&e.name)
                    .and_then(|t| t.grad())
                    .unwrap_or_else(|| vec![0.0; e.data.len()]);
                (e.name.clone(), g)
            })
            .collect()
    }
}
