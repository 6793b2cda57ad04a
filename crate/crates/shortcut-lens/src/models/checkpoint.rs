//! Checkpoint container: a JSON manifest plus one binary blob.
//!
//! Layout on disk (one directory per checkpoint):
//!   - `checkpoint.json` — manifest: format version, blob file name, blob
//!     SHA-256, caller metadata, and one entry per array giving its name,
//!     dtype, shape, byte offset, and element count.
//!   - `weights.bin` — all arrays concatenated as little-endian f32.
//!
//! Writes go through a temp file followed by a rename, blob first, so a
//! reader never observes a manifest that references a half-written blob;
//! a torn pair fails the checksum on load instead of yielding garbage.
//! Round-trips are bit-exact (values are moved as raw f32 bits).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::ArrayD;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

const MANIFEST_NAME: &str = "checkpoint.json";
const BLOB_NAME: &str = "weights.bin";
const FORMAT_VERSION: u32 = 1;

#[derive(serde::Serialize, serde::Deserialize)]
struct Manifest {
    format: u32,
    blob: String,
    blob_sha256: String,
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ArrayEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    /// Byte offset into the blob.
    offset: u64,
    /// Element count (product of `shape`).
    len: u64,
}

/// A loaded checkpoint: caller metadata plus named arrays.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    arrays: Vec<(String, ArrayD<f32>)>,
    index: HashMap<String, usize>,
}

impl Checkpoint {
    pub fn array(&self, name: &str) -> Option<&ArrayD<f32>> {
        self.index.get(name).map(|&i| &self.arrays[i].1)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    /// All arrays whose name starts with `prefix` followed by `/`, with
    /// their full stored names (callers that need the prefix stripped pass
    /// the same prefix to their own import routine).
    pub fn arrays_with_prefix(&self, prefix: &str) -> Vec<(String, ArrayD<f32>)> {
        let want = format!("{prefix}/");
        self.arrays
            .iter()
            .filter(|(n, _)| n.starts_with(&want))
            .cloned()
            .collect()
    }

    /// Copy every parameter of `store` back from this checkpoint, matching
    /// the naming produced by [`store_arrays`] with the same `prefix`.
    /// Fails if any parameter is missing or has a different shape.
    pub fn restore_store(&self, prefix: &str, store: &mut ParamStore<f32>) -> Result<()> {
        let mut named = Vec::with_capacity(store.len());
        for (_, name, _, _) in store.iter() {
            let full = format!("{prefix}/{name}");
            let arr = self
                .array(&full)
                .ok_or_else(|| Error::Checkpoint(format!("missing array {full}")))?;
            named.push((name.to_string(), arr.clone()));
        }
        store.load_from(&named)
    }
}

/// Flatten a parameter store into prefixed named arrays (`{prefix}/{name}`),
/// in slot order, for [`save_checkpoint`].
pub fn store_arrays(prefix: &str, store: &ParamStore<f32>) -> Vec<(String, ArrayD<f32>)> {
    store
        .iter()
        .map(|(_, name, value, _)| (format!("{prefix}/{name}"), value.clone()))
        .collect()
}

/// Write a checkpoint directory (creating it if needed). Overwrites any
/// checkpoint already present at `dir`.
pub fn save_checkpoint(
    dir: &Path,
    meta: &serde_json::Value,
    arrays: &[(String, ArrayD<f32>)],
) -> Result<()> {
    {
        let mut seen = HashMap::new();
        for (i, (name, _)) in arrays.iter().enumerate() {
            if let Some(prev) = seen.insert(name.as_str(), i) {
                return Err(Error::Checkpoint(format!(
                    "duplicate array name {name} (entries {prev} and {i})"
                )));
            }
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut blob: Vec<u8> = Vec::new();
    let mut entries = Vec::with_capacity(arrays.len());
    for (name, arr) in arrays {
        let offset = blob.len() as u64;
        // `iter()` walks logical order, so layout on disk is row-major
        // regardless of the in-memory strides.
        for &x in arr.iter() {
            blob.extend_from_slice(&x.to_le_bytes());
        }
        entries.push(ArrayEntry {
            name: name.clone(),
            dtype: "f32".to_string(),
            shape: arr.shape().to_vec(),
            offset,
            len: arr.len() as u64,
        });
    }

    let manifest = Manifest {
        format: FORMAT_VERSION,
        blob: BLOB_NAME.to_string(),
        blob_sha256: sha256_hex(&blob),
        meta: meta.clone(),
        arrays: entries,
    };
    let manifest_text = serde_json::to_vec_pretty(&manifest)?;

    write_atomic(&dir.join(BLOB_NAME), &blob)?;
    write_atomic(&dir.join(MANIFEST_NAME), &manifest_text)?;
    Ok(())
}

/// Load and validate a checkpoint directory.
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let manifest_text = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_slice(&manifest_text)
        .map_err(|e| Error::Checkpoint(format!("bad manifest {}: {e}", manifest_path.display())))?;
    if manifest.format != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format {} (this build reads {FORMAT_VERSION})",
            manifest.format
        )));
    }

    let blob_path = dir.join(&manifest.blob);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let got = sha256_hex(&blob);
    if got != manifest.blob_sha256 {
        return Err(Error::Checkpoint(format!(
            "blob checksum mismatch for {}: manifest {}, file {}",
            blob_path.display(),
            manifest.blob_sha256,
            got
        )));
    }

    let mut arrays = Vec::with_capacity(manifest.arrays.len());
    let mut index = HashMap::with_capacity(manifest.arrays.len());
    for e in &manifest.arrays {
        if e.dtype != "f32" {
            return Err(Error::Checkpoint(format!(
                "array {}: unsupported dtype {}",
                e.name, e.dtype
            )));
        }
        let count = e.shape.iter().try_fold(1u64, |acc, &d| {
            acc.checked_mul(d as u64)
        });
        if count != Some(e.len) {
            return Err(Error::Checkpoint(format!(
                "array {}: shape {:?} does not match element count {}",
                e.name, e.shape, e.len
            )));
        }
        let bytes = e
            .len
            .checked_mul(4)
            .and_then(|n| e.offset.checked_add(n))
            .ok_or_else(|| Error::Checkpoint(format!("array {}: offset overflow", e.name)))?;
        if bytes > blob.len() as u64 {
            return Err(Error::Checkpoint(format!(
                "array {}: extends to byte {} but blob is {} bytes",
                e.name,
                bytes,
                blob.len()
            )));
        }
        let start = e.offset as usize;
        let values: Vec<f32> = blob[start..start + e.len as usize * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let arr = ArrayD::from_shape_vec(e.shape.clone(), values)
            .map_err(|err| Error::Checkpoint(format!("array {}: {err}", e.name)))?;
        if index.insert(e.name.clone(), arrays.len()).is_some() {
            return Err(Error::Checkpoint(format!("duplicate array name {}", e.name)));
        }
        arrays.push((e.name.clone(), arr));
    }

    Ok(Checkpoint {
        meta: manifest.meta,
        arrays,
        index,
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}
