use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
pub struct Param<T: Element> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

/// Named, ordered parameters of one network plus their accumulated gradients.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Element = f32> {
    params: Vec<Param<T>>,
}

/// Graph leaves created for a store by [`ParamStore::bind`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Binding over explicit leaves, in the store's registration order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    /// Adds a parameter. Names must be unique within a store.
    pub fn register(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name `{name}`"
        );
        self.params.push(Param {
            name,
            value,
            grad: None,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.id_of(name).map(|id| self.get(id))
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::mismatch("set_value", p.value.shape(), value.shape()));
        }
        p.value = value;
        Ok(())
    }

    pub fn set_by_name(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self
            .id_of(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        self.set_value(id, value)
    }

    pub(crate) fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Creates one graph leaf per parameter. Frozen bindings never receive
    /// gradients.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| g.leaf(p.value.clone(), trainable))
                .collect(),
        }
    }

    /// Adds the gradients held by the graph leaves into the store.
    pub fn accumulate_grads(&mut self, g: &Graph<T>, bound: &Bound) {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            let Some(grad) = g.grad(v) else { continue };
            match &mut p.grad {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(grad.data()) {
                        *a = *a + *b;
                    }
                }
                None => p.grad = Some(grad.clone()),
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Gradient of a parameter, zero if none has been accumulated.
    pub fn grad_or_zero(&self, id: ParamId) -> Tensor<T> {
        let p = &self.params[id.0];
        p.grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(p.value.shape()).expect("valid shape"))
    }

    /// Bit-exact fingerprint of all parameter values, in registration order.
    pub fn checksum(&self) -> u64 {
        self.params.iter().fold(0u64, |h, p| {
            h.rotate_left(7) ^ p.value.checksum() ^ (p.value.len() as u64)
        })
    }

    /// Copies every parameter whose name and shape also exist in `other`.
    /// Returns how many were copied.
    pub fn transplant_from(&mut self, other: &ParamStore<T>) -> usize {
        let mut copied = 0;
        for p in &mut self.params {
            if let Some(src) = other.by_name(&p.name) {
                if src.value.shape() == p.value.shape() {
                    p.value = src.value.clone();
                    copied += 1;
                }
            }
        }
        copied
    }

    /// Same parameters in another element type (gradients dropped).
    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: None,
                })
                .collect(),
        }
    }
}
