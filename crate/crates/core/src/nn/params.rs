use std::collections::BTreeMap;

use super::{Real, Tensor};
use crate::error::{config_err, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Real = f32> {
    pub tensor: Tensor<T>,
    pub frozen: bool,
}

/// Named parameters, iterated in lexicographic name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Real = f32> {
    entries: BTreeMap<String, Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(config_err!("duplicate parameter name {name:?}"));
        }
        self.entries.insert(name, Param { tensor, frozen: false });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param<T>> {
        self.entries.get(name).ok_or_else(|| config_err!("unknown parameter {name:?}"))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param<T>> {
        self.entries.get_mut(name).ok_or_else(|| config_err!("unknown parameter {name:?}"))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name).map(|p| &p.tensor)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Sets the frozen flag on every parameter whose name starts with `prefix`.
    /// Returns how many parameters matched.
    pub fn set_frozen_prefix(&mut self, prefix: &str, frozen: bool) -> usize {
        let mut hits = 0;
        for (name, p) in self.entries.iter_mut() {
            if name.starts_with(prefix) {
                p.frozen = frozen;
                hits += 1;
            }
        }
        hits
    }

    pub fn unfreeze_all(&mut self) {
        for p in self.entries.values_mut() {
            p.frozen = false;
        }
    }

    /// Total element count, optionally restricted to trainable (non-frozen) entries.
    pub fn count(&self, trainable_only: bool) -> usize {
        self.entries.values().filter(|p| !(trainable_only && p.frozen)).map(|p| p.tensor.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.tensor.grad = None;
        }
    }

    /// Same store in another precision; frozen flags carried over.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| (k.clone(), Param { tensor: p.tensor.cast(), frozen: p.frozen }))
                .collect(),
        }
    }
}

/// Gradient buffers keyed by parameter name.
pub type Grads<T> = BTreeMap<String, Vec<T>>;

/// Elementwise sum of per-sample gradients, reduced in slice order.
pub fn sum_grads<T: Real>(parts: &[Grads<T>]) -> Grads<T> {
    let mut acc: Grads<T> = BTreeMap::new();
    for part in parts {
        for (name, g) in part {
            match acc.get_mut(name) {
                Some(a) => {
                    for (x, y) in a.iter_mut().zip(g) {
                        *x = *x + *y;
                    }
                }
                None => {
                    acc.insert(name.clone(), g.clone());
                }
            }
        }
    }
    acc
}
