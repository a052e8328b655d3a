use std::collections::HashMap;

use super::{Float, Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Named, ordered collection of parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Float = f32> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Inserts or replaces a parameter; insertion order is kept.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.entries[i].1 = value,
            None => {
                self.index.insert(name.clone(), self.entries.len());
                self.entries.push((name, value));
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter '{}'", name)))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|(n, _)| n.clone()).collect()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Copy with every name prefixed by `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> Self {
        let mut out = Self::new();
        for (n, t) in &self.entries {
            out.insert(format!("{}{}", prefix, n), t.clone());
        }
        out
    }

    /// Entries whose name starts with `prefix`, with the prefix removed.
    pub fn strip_prefix(&self, prefix: &str) -> Self {
        let mut out = Self::new();
        for (n, t) in &self.entries {
            if let Some(rest) = n.strip_prefix(prefix) {
                out.insert(rest, t.clone());
            }
        }
        out
    }

    pub fn extend(&mut self, other: &Self) {
        for (n, t) in &other.entries {
            self.insert(n.clone(), t.clone());
        }
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (n, t) in &self.entries {
            out.insert(n.clone(), t.cast());
        }
        out
    }

    /// Places every parameter on `tape`, differentiable when `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> Binding<'t, T> {
        let vars = self
            .entries
            .iter()
            .map(|(_, t)| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Binding {
            vars,
            index: self.index.clone(),
        }
    }
}

/// Parameters of a [`ParamStore`] placed on a tape.
pub struct Binding<'t, T: Float> {
    vars: Vec<Var<'t, T>>,
    index: HashMap<String, usize>,
}

impl<'t, T: Float> Binding<'t, T> {
    /// Binds already-created variables by name (e.g. gradient-check inputs).
    pub fn from_vars(named: impl IntoIterator<Item = (String, Var<'t, T>)>) -> Self {
        let mut vars = Vec::new();
        let mut index = HashMap::new();
        for (name, v) in named {
            index.insert(name, vars.len());
            vars.push(v);
        }
        Self { vars, index }
    }

    /// The bound variable for `name`. Panics on unknown names: model code and
    /// its parameter layout are built together.
    pub fn get(&self, name: &str) -> Var<'t, T> {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("parameter '{}' is not bound", name),
        }
    }

    pub fn try_get(&self, name: &str) -> Option<Var<'t, T>> {
        self.index.get(name).map(|&i| self.vars[i])
    }

    /// Gradients in store order; zeros for parameters the loss did not touch.
    pub fn grads(&self, gradients: &Gradients<T>) -> Vec<Tensor<T>> {
        self.vars.iter().map(|&v| gradients.get_or_zeros(v)).collect()
    }
}
