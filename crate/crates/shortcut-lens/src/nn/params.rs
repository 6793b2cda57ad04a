//! Named parameter storage.
//!
//! A [`ParamStore`] is an ordered map from layer-path names (e.g.
//! `"stage1/block0/conv1/w"`) to float arrays, with a trainable flag per
//! entry (running batch-norm statistics are stored but not trained).
//! Insertion order is fixed by network construction, which makes iteration
//! deterministic and lets optimizers key state by slot index.

use ndarray::ArrayD;
use std::collections::HashMap;

use super::El;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ParamStore<F> {
    names: Vec<String>,
    values: Vec<ArrayD<F>>,
    trainable: Vec<bool>,
    index: HashMap<String, usize>,
}

impl<F: El> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: El> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            trainable: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<F>, trainable: bool) -> usize {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let slot = self.values.len();
        self.index.insert(name.clone(), slot);
        self.names.push(name);
        self.values.push(value);
        self.trainable.push(trainable);
        slot
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.names[slot]
    }

    pub fn value(&self, slot: usize) -> &ArrayD<F> {
        &self.values[slot]
    }

    pub fn value_mut(&mut self, slot: usize) -> &mut ArrayD<F> {
        &mut self.values[slot]
    }

    pub fn is_trainable(&self, slot: usize) -> bool {
        self.trainable[slot]
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &str, &ArrayD<F>, bool)> {
        (0..self.len()).map(move |i| (i, self.names[i].as_str(), &self.values[i], self.trainable[i]))
    }

    /// Total element count of trainable entries.
    pub fn count_trainable(&self) -> usize {
        self.values
            .iter()
            .zip(&self.trainable)
            .filter(|(_, &t)| t)
            .map(|(v, _)| v.len())
            .sum()
    }

    /// Copy values in from another store with identical layout (used by
    /// checkpoint restore). Errors on any name/shape mismatch.
    pub fn load_from(&mut self, named: &[(String, ArrayD<F>)]) -> Result<()> {
        if named.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: store has {}, source has {}",
                self.len(),
                named.len()
            )));
        }
        for (name, arr) in named {
            let slot = self.slot(name).ok_or_else(|| {
                Error::Checkpoint(format!("parameter {name} not present in target store"))
            })?;
            if self.values[slot].shape() != arr.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} shape mismatch: store {:?}, source {:?}",
                    self.values[slot].shape(),
                    arr.shape()
                )));
            }
            self.values[slot] = arr.clone();
        }
        Ok(())
    }
}
