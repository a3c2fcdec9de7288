use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{NumericsError, Real, Tape, Tensor, Var};

/// Named `f32` parameter tensors in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor<f32>)>,
    index: BTreeMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor<f32>) -> Result<(), NumericsError> {
        if self.index.contains_key(name) {
            return Err(NumericsError::DuplicateParameter(name.to_string()));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Scalar count over tensors whose name starts with `prefix`.
    pub fn count(&self, prefix: &str) -> usize {
        self.iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Records every tensor on `tape` at precision `T`; names for which
    /// `trainable` is true become gradient-receiving leaves.
    pub fn bind<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        trainable: impl Fn(&str) -> bool,
    ) -> Bound<'t, T> {
        let vars = self
            .entries
            .iter()
            .map(|(name, t)| {
                let v = tape.leaf(t.cast(), trainable(name));
                (name.clone(), v)
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters recorded on one tape.
pub struct Bound<'t, T: Real> {
    vars: BTreeMap<String, Var<'t, T>>,
}

impl<'t, T: Real> Bound<'t, T> {
    pub fn get(&self, name: &str) -> Result<Var<'t, T>, NumericsError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| NumericsError::UnknownParameter(name.to_string()))
    }

    /// Replaces the var bound to `name`, e.g. to differentiate with respect
    /// to a single tensor.
    pub fn replace(&mut self, name: &str, var: Var<'t, T>) -> Result<(), NumericsError> {
        match self.vars.get_mut(name) {
            Some(slot) => {
                *slot = var;
                Ok(())
            }
            None => Err(NumericsError::UnknownParameter(name.to_string())),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var<'t, T>)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }
}
