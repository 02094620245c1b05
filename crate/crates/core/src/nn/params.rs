use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::scalar::Scalar;

/// Handle to a trainable tensor in a [`ParamStore`]. Layers that hold the
/// same id share (alias) the same parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

/// Handle to a non-trainable state tensor (batch-norm running statistics).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BufferId(pub(crate) usize);

/// Named tensors stored in creation order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorStore<T> {
    names: Vec<String>,
    values: Vec<ArrayD<T>>,
}

impl<T: Scalar> TensorStore<T> {
    pub fn new() -> Self {
        TensorStore {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    fn push(&mut self, name: String, value: ArrayD<T>) -> usize {
        self.names.push(name);
        self.values.push(value);
        self.values.len() - 1
    }

    /// Number of tensors.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of scalar entries over all tensors.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[ArrayD<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [ArrayD<T>] {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Replaces all values, checking names and shapes match.
    pub fn load_from(&mut self, other: &TensorStore<T>) -> Result<(), String> {
        if self.names != other.names {
            return Err("tensor names differ".into());
        }
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            if dst.shape() != src.shape() {
                return Err(format!("shape {:?} vs {:?}", dst.shape(), src.shape()));
            }
            dst.assign(src);
        }
        Ok(())
    }
}

pub type ParamStore<T> = TensorStore<T>;
pub type BufferStore<T> = TensorStore<T>;

impl<T: Scalar> TensorStore<T> {
    pub fn add_param(&mut self, name: impl Into<String>, value: ArrayD<T>) -> ParamId {
        ParamId(self.push(name.into(), value))
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: ArrayD<T>) -> BufferId {
        BufferId(self.push(name.into(), value))
    }

    pub fn param(&self, id: ParamId) -> &ArrayD<T> {
        &self.values[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut ArrayD<T> {
        &mut self.values[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &ArrayD<T> {
        &self.values[id.0]
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut ArrayD<T> {
        &mut self.values[id.0]
    }

    pub fn param_name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }
}

/// Gradient accumulators, one per parameter tensor.
#[derive(Clone, Debug)]
pub struct Grads<T> {
    values: Vec<ArrayD<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn zeros_like(params: &ParamStore<T>) -> Self {
        Grads {
            values: params
                .values()
                .iter()
                .map(|v| ArrayD::zeros(v.raw_dim()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<T> {
        &mut self.values[id.0]
    }

    pub fn values(&self) -> &[ArrayD<T>] {
        &self.values
    }

    /// Euclidean norm of one parameter's gradient.
    pub fn norm(&self, id: ParamId) -> f64 {
        self.values[id.0]
            .iter()
            .map(|v| {
                let v = v.as_f64();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// He (fan-in) normal initialization.
pub fn he_normal<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> ArrayD<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    ArrayD::from_shape_simple_fn(IxDyn(shape), || T::from_f64_lossy(dist.sample(rng)))
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn fan_in_uniform<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> ArrayD<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
    ArrayD::from_shape_simple_fn(IxDyn(shape), || T::from_f64_lossy(dist.sample(rng)))
}
