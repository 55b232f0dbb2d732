use std::collections::BTreeMap;
use std::ops::Deref;
use std::cell::RefCell;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Gradient per parameter name.
pub type GradMap = BTreeMap<String, Tensor>;

/// Named trainable tensors, iterated in lexicographic name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    params: BTreeMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        value.validate()?;
        self.params.insert(name, value.with_requires_grad(true));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Replaces every value with the same-named tensor from `other`, which
    /// must hold exactly the same names and shapes.
    pub fn assign_from(&mut self, other: ParameterSet) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for (name, value) in other.params {
            let slot = self
                .params
                .get_mut(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter `{name}`")))?;
            if slot.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    value.shape(),
                    slot.shape()
                )));
            }
            *slot = value.with_requires_grad(true);
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> GradMap {
        self.params
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
            .collect()
    }
}

/// A forward pass over one tape with lazily bound parameters.
pub struct Graph<'p> {
    tape: Tape,
    params: &'p ParameterSet,
    bound: RefCell<BTreeMap<String, Var>>,
    track: bool,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParameterSet) -> Self {
        Self {
            tape: Tape::new(),
            params,
            bound: RefCell::new(BTreeMap::new()),
            track: true,
        }
    }

    /// Parameters enter the tape as constants; nothing is differentiable.
    pub fn inference(params: &'p ParameterSet) -> Self {
        Self {
            track: false,
            ..Self::new(params)
        }
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn params(&self) -> &'p ParameterSet {
        self.params
    }

    /// Variable for the named parameter, recorded on first use.
    pub fn param(&self, name: &str) -> Result<Var> {
        if let Some(v) = self.bound.borrow().get(name) {
            return Ok(*v);
        }
        let t = self
            .params
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))?;
        let v = if self.track {
            self.tape.leaf(t.clone())
        } else {
            self.tape.constant(t.clone())
        };
        self.bound.borrow_mut().insert(name.to_string(), v);
        Ok(v)
    }

    /// Differentiates `loss` and returns one gradient per parameter (zeros
    /// for parameters the loss does not reach). Consumes the graph.
    pub fn backward(self, loss: Var) -> Result<GradMap> {
        let grads = self.tape.backward(loss)?;
        let bound = self.bound.into_inner();
        Ok(self
            .params
            .iter()
            .map(|(name, t)| {
                let g = match bound.get(name) {
                    Some(v) => grads.get(*v),
                    None => Tensor::zeros(t.shape()),
                };
                (name.to_string(), g)
            })
            .collect())
    }
}

impl Deref for Graph<'_> {
    type Target = Tape;

    fn deref(&self) -> &Tape {
        &self.tape
    }
}

/// Elementwise `a += b` over gradient maps with the same keys.
pub fn accumulate_grads(into: &mut GradMap, other: &GradMap) -> Result<()> {
    for (name, g) in other {
        let slot = into
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("gradient for unknown parameter `{name}`")))?;
        if slot.shape() != g.shape() {
            return Err(Error::shape("accumulate_grads", format!("{name}: {:?} vs {:?}", slot.shape(), g.shape())));
        }
        for (a, b) in slot.data_mut().iter_mut().zip(g.data()) {
            *a += b;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unreached_params_get_zero_gradients() {
        let mut ps = ParameterSet::new();
        ps.insert("a", Tensor::ones(&[2])).unwrap();
        ps.insert("b", Tensor::ones(&[3])).unwrap();
        let g = Graph::new(&ps);
        let a = g.param("a").unwrap();
        let l = g.sum(a).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads["a"], Tensor::ones(&[2]));
        assert_eq!(grads["b"], Tensor::zeros(&[3]));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut ps = ParameterSet::new();
        ps.insert("w", Tensor::ones(&[1])).unwrap();
        assert!(ps.insert("w", Tensor::ones(&[1])).is_err());
        assert!(ps.get("w").unwrap().requires_grad());
    }
}
