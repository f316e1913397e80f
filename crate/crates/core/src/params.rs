//! Named parameter storage with deterministic iteration order and
//! deterministic initialization.

use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, GraphError, NodeId};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum ParamError {
    #[error("duplicate parameter name {0:?}")]
    Duplicate(String),
    #[error("unknown parameter name {0:?}")]
    Unknown(String),
}

/// Ordered name -> tensor map. Insertion order is the canonical order used
/// by the optimizer, the checkpoint index, and gradient accumulation.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    entries: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<(), ParamError> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(ParamError::Duplicate(name));
        }
        self.entries.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>, ParamError> {
        self.entries
            .get(name)
            .ok_or_else(|| ParamError::Unknown(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>, ParamError> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| ParamError::Unknown(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.entries.iter_mut()
    }

    pub fn total_elements(&self) -> usize {
        self.entries.values().map(|t| t.numel()).sum()
    }

    /// Registers every parameter as a gradient-requiring leaf, in store
    /// order, and returns the name -> node binding for one graph.
    pub fn bind(&self, g: &mut Graph<T>) -> BoundParams {
        self.bind_with_grad(g, true)
    }

    /// Inference binding: no gradients flow back to the parameters.
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> BoundParams {
        self.bind_with_grad(g, false)
    }

    fn bind_with_grad(&self, g: &mut Graph<T>, requires_grad: bool) -> BoundParams {
        let mut map = IndexMap::with_capacity(self.entries.len());
        for (name, t) in &self.entries {
            let id = g.leaf(t.clone(), requires_grad);
            map.insert(name.clone(), id);
        }
        BoundParams { map }
    }
}

/// Name -> node ids of one graph's bound parameter leaves.
pub struct BoundParams {
    map: IndexMap<String, NodeId>,
}

impl BoundParams {
    /// Binding over leaves created elsewhere (the finite-difference harness
    /// owns leaf creation so it can perturb them).
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, NodeId)>) -> Self {
        Self {
            map: pairs.into_iter().collect(),
        }
    }

    pub fn id(&self, name: &str) -> Result<NodeId, GraphError> {
        self.map.get(name).copied().ok_or_else(|| GraphError::Invalid {
            op: "bound_params",
            msg: format!("parameter {name:?} not bound in this graph"),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, NodeId)> {
        self.map.iter().map(|(n, id)| (n, *id))
    }
}

/// Initializer choices. Sampling happens in f64 and is cast to the working
/// precision afterwards, so f32 and f64 models start from the same values.
pub enum Init {
    /// U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    XavierUniform { fan_in: usize, fan_out: usize },
    /// N(0, std^2) via Box-Muller.
    Normal { std: f64 },
    Zeros,
    Ones,
}

pub fn init_tensor<T: Scalar>(shape: Vec<usize>, init: Init, rng: &mut ChaCha8Rng) -> Tensor<T> {
    match init {
        Init::XavierUniform { fan_in, fan_out } => {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-a..a)))
        }
        Init::Normal { std } => Tensor::from_fn(shape, |_| {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            T::from_f64(z * std)
        }),
        Init::Zeros => Tensor::zeros(shape),
        Init::Ones => Tensor::full(shape, T::one()),
    }
}
