//! Named, ordered parameter storage.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Parameters in registration order. Registration order is also the order
/// used for binding, checkpoints and optimizer state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor<f32>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<f32>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "parameter {name} registered twice"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Uniform in `[-s, s]` with `s = sqrt(1 / fan_in)`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = (1.0 / fan_in as f64).sqrt() as f32;
        let dist = Uniform::new_inclusive(-bound, bound).expect("positive bound");
        let n = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        self.add(name, Tensor::new(shape, data).expect("shape matches"))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<f32> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<f32> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Replaces every value from `other`, which must have the same names and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::InvalidConfig(
                "checkpoint parameters do not match the model".into(),
            ));
        }
        for (mine, theirs) in self.values.iter_mut().zip(&other.values) {
            if mine.shape() != theirs.shape() {
                return Err(Error::InvalidShape(format!(
                    "checkpoint shape {:?} vs model {:?}",
                    theirs.shape(),
                    mine.shape()
                )));
            }
            *mine = theirs.clone();
        }
        Ok(())
    }

    /// Adds every parameter to `g` as a leaf, cast to `T`.
    pub fn bind<T: Scalar>(&self, g: &mut Graph<T>) -> Bound {
        Bound(self.values.iter().map(|v| g.leaf(v.cast())).collect())
    }

    /// Parameters as `f64` tensors, for gradient checking.
    pub fn to_f64(&self) -> Vec<(String, Tensor<f64>)> {
        self.names
            .iter()
            .cloned()
            .zip(self.values.iter().map(Tensor::cast))
            .collect()
    }
}

/// Graph handles for every parameter of a store, indexable by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(pub Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// Weight and bias of a convolution or dense layer. Weights start uniform in
/// `±sqrt(1/fan_in)`, biases at zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layer {
    pub w: ParamId,
    pub b: ParamId,
}

impl Layer {
    pub fn conv(
        store: &mut ParamStore,
        name: &str,
        k: usize,
        cin: usize,
        cout: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = k * k * cin;
        Self {
            w: store.add_uniform(format!("{name}.w"), &[k, k, cin, cout], fan_in, rng),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[cout])),
        }
    }

    pub fn dense(store: &mut ParamStore, name: &str, n: usize, m: usize, rng: &mut impl Rng) -> Self {
        Self {
            w: store.add_uniform(format!("{name}.w"), &[n, m], n, rng),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[m])),
        }
    }

    pub fn vars(&self, bound: &Bound) -> (Var, Var) {
        (bound[self.w], bound[self.b])
    }
}
