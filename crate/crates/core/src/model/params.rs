use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

/// Named trainable arrays, iterated in lexicographic name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore<T> {
    params: BTreeMap<String, Param<T>>,
}

impl<T: Real> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            params: BTreeMap::new(),
        }
    }

    /// Adds a parameter. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::contract("parameter store", format!("duplicate name `{name}`")));
        }
        self.params.insert(name, Param { value, grad: None });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    /// Value of parameter `name`. Panics on unknown names, which are
    /// programming errors inside the model.
    pub fn value(&self, name: &str) -> &Tensor<T> {
        match self.params.get(name) {
            Some(p) => &p.value,
            None => panic!("unknown parameter `{name}`"),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Total number of trainable scalars.
    pub fn total_elements(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn clear_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    pub fn map_values(&mut self, mut f: impl FnMut(&str, &mut Tensor<T>)) {
        for (k, p) in self.params.iter_mut() {
            f(k, &mut p.value);
        }
    }

    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        ParameterStore {
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: p.value.cast(),
                            grad: p.grad.as_ref().map(Tensor::cast),
                        },
                    )
                })
                .collect(),
        }
    }
}
