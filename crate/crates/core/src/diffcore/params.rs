//! Named parameter collections and their on-disk format.
//!
//! A saved set is two files: `<stem>.json`, a manifest listing each entry's
//! name, shape, dtype and byte offset, and `<stem>.bin`, one little-endian
//! `f64` blob holding all entries back to back in manifest order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{arg_err, dim_err, Error, Result};

pub const PARAMS_FORMAT: &str = "mend-params/1";

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Ordered map of named tensors. Shapes are fixed once inserted.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, ParamEntry>,
}

/// Gradients keyed by parameter name.
pub type GradMap = BTreeMap<String, Tensor>;

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(arg_err!("duplicate parameter name {name}"));
        }
        self.entries.insert(name, ParamEntry { tensor, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|e| &e.tensor)
            .ok_or_else(|| arg_err!("no parameter named {name}"))
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    /// Replaces the values of an entry; the shape must not change.
    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| arg_err!("no parameter named {name}"))?;
        if e.tensor.shape() != tensor.shape() {
            return Err(dim_err!(
                "{name}: shape {:?} cannot change to {:?}",
                e.tensor.shape(),
                tensor.shape()
            ));
        }
        e.tensor = tensor;
        Ok(())
    }

    pub(crate) fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.tensor)
            .ok_or_else(|| arg_err!("no parameter named {name}"))
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.entries
            .get_mut(name)
            .map(|e| e.trainable = trainable)
            .ok_or_else(|| arg_err!("no parameter named {name}"))
    }

    /// Marks every entry frozen.
    pub fn freeze_all(&mut self) {
        self.entries.values_mut().for_each(|e| e.trainable = false);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|e| e.tensor.len()).sum()
    }

    /// Copies every entry of `other` under `prefix/`.
    pub fn merge_prefixed(&mut self, prefix: &str, other: &ParamSet) -> Result<()> {
        for (name, e) in other.iter() {
            self.insert(format!("{prefix}/{name}"), e.tensor.clone(), e.trainable)?;
        }
        Ok(())
    }

    /// Entries under `prefix/`, with the prefix stripped.
    pub fn extract_prefixed(&self, prefix: &str) -> ParamSet {
        let p = format!("{prefix}/");
        let entries = self
            .entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
            .collect();
        ParamSet { entries }
    }

    /// Puts every entry on the tape. Trainable entries become tracked
    /// variables when `track` is set; everything else is a constant.
    pub fn bind(&self, tape: &mut Tape, track: bool) -> Result<Bindings> {
        let mut vars = BTreeMap::new();
        for (name, e) in &self.entries {
            let v = if track && e.trainable {
                tape.variable(e.tensor.clone())?
            } else {
                tape.constant(e.tensor.clone())?
            };
            vars.insert(name.clone(), v);
        }
        Ok(Bindings { vars })
    }

    /// Flat checksum-free view used by determinism tests.
    pub fn bit_pattern(&self) -> Vec<u64> {
        self.entries
            .values()
            .flat_map(|e| e.tensor.data().iter().map(|v| v.to_bits()))
            .collect()
    }

    pub fn save(&self, stem: &Path, meta: serde_json::Value) -> Result<()> {
        let (json_path, bin_path) = stem_paths(stem);
        let mut blob = Vec::with_capacity(self.scalar_count() * 8);
        let mut manifest = Vec::with_capacity(self.entries.len());
        for (name, e) in &self.entries {
            manifest.push(ManifestEntry {
                name: name.clone(),
                shape: e.tensor.shape().to_vec(),
                dtype: "f64".into(),
                offset: blob.len() as u64,
                trainable: e.trainable,
            });
            for v in e.tensor.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let doc = Manifest {
            format: PARAMS_FORMAT.into(),
            blob: bin_path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            entries: manifest,
            meta,
        };
        if let Some(parent) = json_path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&bin_path, blob)?;
        fs::write(&json_path, serde_json::to_vec_pretty(&doc)?)?;
        Ok(())
    }

    /// Loads a set and the manifest's free-form metadata block.
    pub fn load(stem: &Path) -> Result<(ParamSet, serde_json::Value)> {
        let (json_path, bin_path) = stem_paths(stem);
        let doc: Manifest = serde_json::from_slice(&fs::read(&json_path)?)?;
        if doc.format != PARAMS_FORMAT {
            return Err(Error::Format(format!(
                "{}: unsupported format {}",
                json_path.display(),
                doc.format
            )));
        }
        let blob = fs::read(&bin_path)?;
        let mut set = ParamSet::new();
        for e in doc.entries {
            if e.dtype != "f64" {
                return Err(Error::Format(format!("{}: dtype {}", e.name, e.dtype)));
            }
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + n * 8;
            if end > blob.len() {
                return Err(Error::Format(format!("{}: blob too short", e.name)));
            }
            let data = blob[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            set.insert(e.name, Tensor::new(e.shape, data)?, e.trainable)?;
        }
        Ok((set, doc.meta))
    }
}

fn stem_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    blob: String,
    entries: Vec<ManifestEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Tape variables for a bound [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bindings {
    vars: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| arg_err!("parameter {name} is not bound"))
    }

    /// Gradients for the tracked entries, keyed by name. Entries the loss
    /// does not reach get a zero gradient.
    pub fn gradients(&self, tape: &Tape, grads: &super::tape::Gradients) -> GradMap {
        self.vars
            .iter()
            .filter(|(_, v)| tape.needs_grad(**v))
            .map(|(k, v)| {
                let g = grads
                    .get(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(tape.value(*v).shape()));
                (k.clone(), g)
            })
            .collect()
    }
}
