use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub gradient: Tensor<T>,
    pub trainable: bool,
}

/// Flat, ordered collection of named parameters.
///
/// Registration order is the canonical order used by gradients, optimizer
/// state and checkpoints.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let gradient = Tensor::zeros(tensor.shape());
        self.params.push(Parameter {
            name: name.into(),
            tensor,
            gradient,
            trainable: true,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_frozen(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let id = self.add(name, tensor);
        self.params[id.0].trainable = false;
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].tensor
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Number of scalar values across trainable parameters.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.tensor.len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.gradient = Tensor::zeros(p.tensor.shape());
        }
    }

    /// Overwrites the stored gradients. `grads` must follow registration order.
    pub fn set_grads(&mut self, grads: Vec<Tensor<T>>) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(NnError::Shape {
                op: "set_grads",
                detail: format!("{} grads for {} params", grads.len(), self.params.len()),
            });
        }
        for (p, g) in self.params.iter_mut().zip(grads) {
            if g.shape() != p.tensor.shape() {
                return Err(NnError::Shape {
                    op: "set_grads",
                    detail: format!("{}: {:?} vs {:?}", p.name, g.shape(), p.tensor.shape()),
                });
            }
            p.gradient = g;
        }
        Ok(())
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                    gradient: p.gradient.cast(),
                    trainable: p.trainable,
                })
                .collect(),
        }
    }
}

/// Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)).
pub fn init_uniform<T: Scalar>(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = (1.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..=bound)))
}

pub fn init_normal<T: Scalar>(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor<T> {
    let normal = Normal::new(0.0, std).expect("std is positive");
    Tensor::from_fn(shape, |_| T::of(normal.sample(rng)))
}
