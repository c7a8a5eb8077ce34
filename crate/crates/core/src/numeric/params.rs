use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::numeric::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A learnable tensor with its gradient and momentum buffer.
#[derive(Debug, Clone)]
pub struct Param {
    name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub momentum: Tensor,
}

impl Param {
    pub fn name(&self) -> &str {
        &self.name
    }
}

/// Named parameter collection. Names are unique; iteration follows insertion order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, ParamId>,
    grads_populated: bool,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        let shape = value.shape().to_vec();
        self.params.push(Param {
            name: name.clone(),
            value,
            grad: Tensor::zeros(&shape),
            momentum: Tensor::zeros(&shape),
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Total number of scalar coordinates.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Zeroes every gradient and re-arms `backward`.
    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
        self.grads_populated = false;
    }

    pub fn grads_populated(&self) -> bool {
        self.grads_populated
    }

    pub(crate) fn mark_grads_populated(&mut self) {
        self.grads_populated = true;
    }

    /// Replaces a parameter value, keeping its shape.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))?;
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::shape(
                format!("parameter `{name}`"),
                p.value.shape(),
                value.shape(),
            ));
        }
        p.value = value;
        Ok(())
    }

    /// Resets every momentum buffer to zero.
    pub fn reset_momentum(&mut self) {
        for p in &mut self.params {
            p.momentum.fill(0.0);
        }
    }
}

/// Samples a tensor uniformly on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn init_uniform(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = 1.0 / libm::sqrt(fan_in as f64);
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-bound..=bound);
    }
    t
}
