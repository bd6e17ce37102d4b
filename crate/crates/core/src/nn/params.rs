use std::collections::HashMap;

use rand::Rng;

use super::mat::Mat;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A learnable matrix with its gradient and Adam moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Mat<T>,
    pub grad: Mat<T>,
    pub first_moment: Mat<T>,
    pub second_moment: Mat<T>,
}

impl<T: Scalar> Parameter<T> {
    fn new(name: String, value: Mat<T>) -> Self {
        let (r, c) = value.shape();
        Self {
            name,
            grad: Mat::zeros(r, c),
            first_moment: Mat::zeros(r, c),
            second_moment: Mat::zeros(r, c),
            value,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }
}

/// Named parameters in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, ParamId>,
    /// Number of Adam updates applied so far.
    pub adam_steps: u64,
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
            adam_steps: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Validation(format!(
                "duplicate parameter name {name}"
            )));
        }
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Parameter::new(name, value));
        Ok(id)
    }

    /// Uniform in `[-a, a]`, `a = sqrt(6 / (rows + cols))`.
    pub fn insert_xavier<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| T::of(rng.random_range(-a..=a)))
            .collect();
        self.insert(name, Mat::from_vec(rows, cols, data)?)
    }

    pub fn insert_zeros(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
    ) -> Result<ParamId> {
        self.insert(name, Mat::zeros(rows, cols))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn grad_norm(&self) -> T {
        self.params
            .iter()
            .flat_map(|p| p.grad.data().iter())
            .map(|&g| g * g)
            .sum::<T>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, s: T) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
        }
    }

    /// Same names, shapes and moment buffers in another scalar type.
    pub fn cast<U: Scalar>(&self) -> ParameterStore<U> {
        let conv = |m: &Mat<T>| {
            Mat::from_vec(
                m.rows(),
                m.cols(),
                m.data().iter().map(|v| U::of(v.as_f64())).collect(),
            )
            .expect("same shape")
        };
        ParameterStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: conv(&p.value),
                    grad: conv(&p.grad),
                    first_moment: conv(&p.first_moment),
                    second_moment: conv(&p.second_moment),
                })
                .collect(),
            index: self.index.clone(),
            adam_steps: self.adam_steps,
        }
    }
}
