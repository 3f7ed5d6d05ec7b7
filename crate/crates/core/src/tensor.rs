//! Tensor bundles: a directory holding `manifest.json` plus one raw
//! little-endian f32 file per array, named `<name>.f32`, row-major.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(default)]
    pub role: String,
    #[serde(default = "default_dtype")]
    pub dtype: String,
    /// Identifiers of the ragged segments when `offsets` is set, otherwise of
    /// the rows along the first axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ids: Option<Vec<String>>,
    /// Start offsets of ragged segments along the last axis, plus the end.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<Vec<usize>>,
}

fn default_dtype() -> String {
    "f32".to_string()
}

impl TensorEntry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, role: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            shape,
            role: role.into(),
            dtype: default_dtype(),
            ids: None,
            offsets: None,
        }
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Self {
        self.ids = Some(ids);
        self
    }

    pub fn with_offsets(mut self, offsets: Vec<usize>) -> Self {
        self.offsets = Some(offsets);
        self
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Manifest {
    arrays: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub entry: TensorEntry,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        &self.entry.shape
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorBundle {
    order: Vec<String>,
    arrays: BTreeMap<String, Tensor>,
}

impl TensorBundle {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add an array, validating size and finiteness.
    pub fn insert(&mut self, entry: TensorEntry, data: Vec<f32>) -> Result<()> {
        validate(&entry, &data)?;
        if self.arrays.contains_key(&entry.name) {
            return Err(Error::DuplicateId(entry.name));
        }
        self.order.push(entry.name.clone());
        self.arrays.insert(entry.name.clone(), Tensor { entry, data });
        Ok(())
    }

    pub fn manifest(&self) -> impl Iterator<Item = &TensorEntry> {
        self.order.iter().map(|n| &self.arrays[n].entry)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.arrays.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::MissingArray(name.to_string()))
    }

    /// First array carrying `role`.
    pub fn by_role(&self, role: &str) -> Option<&Tensor> {
        self.order
            .iter()
            .map(|n| &self.arrays[n])
            .find(|t| t.entry.role == role)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for t in self.arrays.values() {
            let mut bytes = Vec::with_capacity(t.data.len() * 4);
            for v in &t.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            let path = dir.join(format!("{}.f32", t.entry.name));
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        let manifest = Manifest {
            arrays: self.manifest().cloned().collect(),
        };
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(())
    }
}

fn validate(entry: &TensorEntry, data: &[f32]) -> Result<()> {
    if entry.dtype != "f32" {
        return Err(Error::invalid(format!(
            "array `{}` has unsupported dtype `{}`",
            entry.name, entry.dtype
        )));
    }
    if entry.name.is_empty() || entry.name.contains(['/', '\\']) || entry.name.starts_with('.') {
        return Err(Error::invalid(format!("invalid array name `{}`", entry.name)));
    }
    let expected = entry.element_count();
    if data.len() != expected {
        return Err(Error::SizeMismatch {
            name: entry.name.clone(),
            expected,
            found: data.len(),
        });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(entry.name.clone()));
    }
    if let Some(ids) = &entry.ids {
        // ids label the segments of a ragged array, otherwise its rows
        let labelled = match &entry.offsets {
            Some(offsets) => offsets.len().checked_sub(1),
            None => entry.shape.first().copied(),
        };
        if labelled != Some(ids.len()) {
            return Err(Error::invalid(format!(
                "array `{}` lists {} ids for {:?} rows or segments",
                entry.name,
                ids.len(),
                labelled
            )));
        }
    }
    if let Some(offsets) = &entry.offsets {
        let last_axis = entry.shape.last().copied().unwrap_or(0);
        let monotone = offsets.windows(2).all(|w| w[0] <= w[1]);
        if offsets.first() != Some(&0) || offsets.last() != Some(&last_axis) || !monotone {
            return Err(Error::invalid(format!(
                "array `{}` has offsets inconsistent with its last axis ({last_axis})",
                entry.name
            )));
        }
    }
    Ok(())
}

pub fn load_tensor_bundle(dir: &Path) -> Result<TensorBundle> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let raw = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&raw)?;
    let mut bundle = TensorBundle::new();
    for entry in manifest.arrays {
        let path = dir.join(format!("{}.f32", entry.name));
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::SizeMismatch {
                name: entry.name,
                expected: 0,
                found: bytes.len(),
            });
        }
        if bytes.len() / 4 != entry.element_count() {
            return Err(Error::SizeMismatch {
                name: entry.name.clone(),
                expected: entry.element_count(),
                found: bytes.len() / 4,
            });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        bundle.insert(entry, data)?;
    }
    Ok(bundle)
}
