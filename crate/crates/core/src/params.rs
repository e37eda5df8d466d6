use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Learnable arrays addressed by stable names, kept in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F> {
    entries: Vec<(String, Tensor<F>)>,
    index: BTreeMap<String, usize>,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<F>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter '{name}'")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, t));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<F>> {
        self.get(name)
            .ok_or_else(|| Error::contract(format!("missing parameter '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<F>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
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

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in &self.entries {
            t.check_finite(name)?;
        }
        Ok(())
    }

    /// Registers every parameter on `tape`.
    pub fn bind<'p>(&'p self, tape: &mut Tape<'p, F>) -> Result<Bound> {
        let mut vars = BTreeMap::new();
        for (name, t) in &self.entries {
            vars.insert(name.clone(), tape.param(name, t)?);
        }
        Ok(Bound { vars })
    }

    /// Verifies that the stored names are exactly `expected`, with matching shapes.
    pub fn check_layout(&self, expected: &[(String, Vec<usize>)]) -> Result<()> {
        if expected.len() != self.len() {
            return Err(Error::format(format!(
                "expected {} parameters, found {}",
                expected.len(),
                self.len()
            )));
        }
        for (name, shape) in expected {
            let t = self
                .get(name)
                .ok_or_else(|| Error::format(format!("missing parameter '{name}'")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Dimension {
                    op: "parameter layout",
                    left: shape.clone(),
                    right: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }
}

/// Tape handles for a bound [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("parameter '{name}' is not bound")))
    }
}
