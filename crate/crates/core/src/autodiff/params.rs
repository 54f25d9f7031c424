use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Handle to one tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

/// Named dense tensors laid out back to back in one flat buffer.
///
/// Tensors can be added but never reshaped or removed, so the flat layout
/// seen by optimizers stays fixed once a model is built.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<ParamId> {
        let len: usize = shape.iter().product();
        if values.len() != len {
            return Err(Error::InvalidInput(format!(
                "parameter {name}: shape {shape:?} needs {len} values, got {}",
                values.len()
            )));
        }
        if self.index.contains_key(name) {
            return Err(Error::InvalidInput(format!("duplicate parameter name {name}")));
        }
        let id = self.entries.len();
        self.entries.push(Entry {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset: self.data.len(),
            len,
        });
        self.index.insert(name.to_string(), id);
        self.data.extend(values);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.entries[id.0].shape
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        let e = &self.entries[id.0];
        &self.data[e.offset..e.offset + e.len]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        let e = &self.entries[id.0];
        &mut self.data[e.offset..e.offset + e.len]
    }

    /// Range of `id` inside the flat view.
    pub fn range(&self, id: ParamId) -> std::ops::Range<usize> {
        let e = &self.entries[id.0];
        e.offset..e.offset + e.len
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn num_tensors(&self) -> usize {
        self.entries.len()
    }

    /// Total element count; equals `flat().len()`.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Copies all tensors whose name starts with `prefix`, keeping order.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        let mut out = ParamStore::new();
        for e in self.entries.iter().filter(|e| e.name.starts_with(prefix)) {
            let values = self.data[e.offset..e.offset + e.len].to_vec();
            out.add(&e.name, &e.shape, values)
                .expect("names are unique in the source store");
        }
        out
    }

    /// Appends every tensor of `other`.
    pub fn extend_from(&mut self, other: &ParamStore) -> Result<()> {
        for e in &other.entries {
            self.add(&e.name, &e.shape, other.data[e.offset..e.offset + e.len].to_vec())?;
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and the little-endian bytes of every value.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update((e.name.len() as u64).to_le_bytes());
            h.update(e.name.as_bytes());
            h.update((e.shape.len() as u64).to_le_bytes());
            for d in &e.shape {
                h.update((*d as u64).to_le_bytes());
            }
            for v in &self.data[e.offset..e.offset + e.len] {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn to_file(&self) -> ParamFile {
        ParamFile {
            format: PARAM_FORMAT.to_string(),
            version: PARAM_VERSION,
            tensors: self
                .entries
                .iter()
                .map(|e| TensorRecord {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    data: self.data[e.offset..e.offset + e.len].to_vec(),
                })
                .collect(),
            checksum: self.checksum(),
        }
    }

    /// Rebuilds a store from its file form, verifying the checksum.
    pub fn from_file(file: ParamFile, origin: &Path) -> Result<Self> {
        if file.format != PARAM_FORMAT || file.version != PARAM_VERSION {
            return Err(Error::InvalidInput(format!(
                "{}: unsupported parameter file {} v{}",
                origin.display(),
                file.format,
                file.version
            )));
        }
        let mut store = ParamStore::new();
        for t in file.tensors {
            store.add(&t.name, &t.shape, t.data)?;
        }
        let found = store.checksum();
        if found != file.checksum {
            return Err(Error::Checksum {
                path: origin.to_path_buf(),
                expected: file.checksum,
                found,
            });
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_file())?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ParamFile = serde_json::from_str(&text)?;
        ParamStore::from_file(file, path)
    }
}

const PARAM_FORMAT: &str = "pmnn-params";
const PARAM_VERSION: u32 = 1;

/// On-disk checkpoint layout: named shaped arrays plus a checksum.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamFile {
    pub format: String,
    pub version: u32,
    pub tensors: Vec<TensorRecord>,
    pub checksum: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a.w", &[2, 3], vec![1.0, -2.0, 0.1, 1e-300, f64::MIN_POSITIVE, 7.25])
            .unwrap();
        s.add("a.b", &[3], vec![0.3, -0.0, 1.0 / 3.0]).unwrap();
        s.add("b.w", &[1, 1], vec![std::f64::consts::PI]).unwrap();
        s
    }

    #[test]
    fn flat_view_covers_all_tensors() {
        let s = store();
        assert_eq!(s.len(), 10);
        assert_eq!(s.flat().len(), s.ids().map(|id| s.get(id).len()).sum::<usize>());
        let b = s.id("a.b").unwrap();
        assert_eq!(s.range(b), 6..9);
        assert_eq!(s.shape(b), &[3]);
    }

    #[test]
    fn rejects_bad_shapes_and_duplicates() {
        let mut s = store();
        assert!(s.add("c", &[2, 2], vec![0.0; 3]).is_err());
        assert!(s.add("a.w", &[1], vec![0.0]).is_err());
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let s = store();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        s.save(&path).unwrap();
        let back = ParamStore::load(&path).unwrap();
        assert_eq!(back.flat().len(), s.flat().len());
        for (a, b) in back.flat().iter().zip(s.flat()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.checksum(), s.checksum());
    }

    #[test]
    fn tampered_file_fails_checksum() {
        let s = store();
        let mut file = s.to_file();
        file.tensors[0].data[0] = 1.5;
        let err = ParamStore::from_file(file, Path::new("x.json")).unwrap_err();
        assert!(matches!(err, Error::Checksum { .. }));
    }

    #[test]
    fn subset_and_extend_preserve_values() {
        let s = store();
        let a = s.subset("a.");
        assert_eq!(a.num_tensors(), 2);
        let mut merged = a.clone();
        merged.extend_from(&s.subset("b.")).unwrap();
        assert_eq!(merged.flat(), s.flat());
    }
}
