use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::scalar::Scalar;

/// How a tensor is initialised.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    /// Uniform in `+-sqrt(6 / fan_in)`.
    He(usize),
    /// Uniform in `+-1 / sqrt(fan_in)`.
    FanIn(usize),
    Zero,
}

/// Name, shape and initialiser of each tensor, in storage order.
pub(crate) type ParamSpec = Vec<(String, Vec<usize>, Init)>;

/// Ordered, named parameter tensors of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<ArrayD<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub(crate) fn from_spec<R: Rng + ?Sized>(
        spec: &[(String, Vec<usize>, Init)],
        rng: &mut R,
    ) -> Self {
        let mut names = Vec::with_capacity(spec.len());
        let mut tensors = Vec::with_capacity(spec.len());
        for (name, shape, init) in spec {
            let bound = match init {
                Init::He(fan) => (6.0 / *fan as f64).sqrt(),
                Init::FanIn(fan) => 1.0 / (*fan as f64).sqrt(),
                Init::Zero => 0.0,
            };
            let t = if bound == 0.0 {
                ArrayD::zeros(IxDyn(shape))
            } else {
                ArrayD::from_shape_simple_fn(IxDyn(shape), || {
                    T::lit(rng.random_range(-bound..bound))
                })
            };
            names.push(name.clone());
            tensors.push(t);
        }
        Self { names, tensors }
    }

    /// Rebuilds a store from raw tensors, checking them against the layout.
    pub(crate) fn from_tensors(
        spec: &[(String, Vec<usize>, Init)],
        tensors: Vec<ArrayD<T>>,
    ) -> Option<Self> {
        if spec.len() != tensors.len()
            || spec
                .iter()
                .zip(&tensors)
                .any(|((_, s, _), t)| t.shape() != s.as_slice())
        {
            return None;
        }
        Some(Self {
            names: spec.iter().map(|(n, _, _)| n.clone()).collect(),
            tensors,
        })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[ArrayD<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ArrayD<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ArrayD<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(move |i| &mut self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Registers every tensor as a trainable leaf.
    pub fn register(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }
}
