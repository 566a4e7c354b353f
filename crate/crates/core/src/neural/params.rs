use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_REVISION: AtomicU64 = AtomicU64::new(1);

fn fresh_revision() -> u64 {
    NEXT_REVISION.fetch_add(1, Ordering::Relaxed)
}

/// Index of a parameter inside its [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Weights are Glorot-initialized and L2-regularized; biases start at zero
/// and are not regularized. Parameters named `*.bias` are biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

impl ParamKind {
    pub fn for_name(name: &str) -> Self {
        if name.ends_with(".bias") {
            ParamKind::Bias
        } else {
            ParamKind::Weight
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize]) -> Self {
        ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
        }
    }

    pub fn kind(&self) -> ParamKind {
        ParamKind::for_name(&self.name)
    }
}

/// Named tensors in a fixed insertion order.
///
/// Every mutable access stamps a new revision, which lets forward caches
/// detect that the parameters changed underneath them.
#[derive(Debug)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, ParamId>,
    revision: u64,
}

impl Clone for ParamSet {
    fn clone(&self) -> Self {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.clone(),
            index: self.index.clone(),
            revision: fresh_revision(),
        }
    }
}

impl PartialEq for ParamSet {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.tensors == other.tensors
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
            revision: fresh_revision(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Argument(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.names.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        self.revision = fresh_revision();
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        ParamKind::for_name(&self.names[id.0])
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        self.revision = fresh_revision();
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Mutable access to all tensors at once; bumps the revision.
    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        self.revision = fresh_revision();
        &mut self.tensors
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// `Σ‖θ‖²` over weights (biases excluded).
    pub fn weight_sum_squares(&self) -> f64 {
        self.iter()
            .filter(|(id, _, _)| self.kind(*id) == ParamKind::Weight)
            .map(|(_, _, t)| t.sum_squares())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

/// Glorot-uniform weights (`a = sqrt(6 / (fan_in + fan_out))`, with
/// `fan_in = cols`, `fan_out = rows`; vectors use `fan_out = 1`) and zero
/// biases. Deterministic under `seed`.
pub fn init_params(specs: &[ParamSpec], seed: u64) -> Result<ParamSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    for spec in specs {
        if spec.shape.is_empty() || spec.shape.contains(&0) {
            return Err(Error::Argument(format!(
                "parameter `{}` has invalid shape {:?}",
                spec.name, spec.shape
            )));
        }
        let mut tensor = Tensor::zeros(&spec.shape);
        if spec.kind() == ParamKind::Weight {
            let (fan_out, fan_in) = match spec.shape.as_slice() {
                [n] => (1, *n),
                [r, c] => (*r, *c),
                _ => {
                    return Err(Error::Argument(format!(
                        "parameter `{}` must have rank 1 or 2",
                        spec.name
                    )))
                }
            };
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in tensor.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        params.insert(spec.name.clone(), tensor)?;
    }
    Ok(params)
}

/// Gradients aligned with a [`ParamSet`]; absent slots are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSet {
    slots: Vec<Option<Tensor>>,
}

impl GradSet {
    pub fn zeros_like(params: &ParamSet) -> Self {
        GradSet {
            slots: vec![None; params.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.slots[id.0].as_ref()
    }

    /// Zero-filled slot of `shape`, created on first use.
    pub fn entry(&mut self, id: ParamId, shape: &[usize]) -> &mut Tensor {
        self.slots[id.0].get_or_insert_with(|| Tensor::zeros(shape))
    }

    pub fn set(&mut self, id: ParamId, tensor: Tensor) {
        self.slots[id.0] = Some(tensor);
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, scale: f64, other: &GradSet) {
        for (mine, theirs) in self.slots.iter_mut().zip(&other.slots) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => m.add_scaled(scale, t),
                    None => {
                        let mut copy = t.clone();
                        copy.scale(scale);
                        *mine = Some(copy);
                    }
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.slots.iter_mut().flatten() {
            t.scale(factor);
        }
    }

    /// Adds the gradient of `lambda * Σ‖θ‖²` over weights.
    pub fn add_l2(&mut self, params: &ParamSet, lambda: f64) {
        if lambda == 0.0 {
            return;
        }
        for (id, _, tensor) in params.iter() {
            if params.kind(id) == ParamKind::Weight {
                self.entry(id, tensor.shape()).add_scaled(2.0 * lambda, tensor);
            }
        }
    }

    /// Value at flat coordinate `i` of parameter `id` (zero when absent).
    pub fn value(&self, id: ParamId, i: usize) -> f64 {
        self.get(id).map_or(0.0, |t| t.data()[i])
    }

    pub fn is_finite(&self) -> bool {
        self.slots.iter().flatten().all(Tensor::is_finite)
    }

    pub fn norm(&self) -> f64 {
        self.slots
            .iter()
            .flatten()
            .map(Tensor::sum_squares)
            .sum::<f64>()
            .sqrt()
    }

    /// True when every present slot is entirely zero.
    pub fn is_zero(&self) -> bool {
        self.slots
            .iter()
            .flatten()
            .all(|t| t.data().iter().all(|&v| v == 0.0))
    }
}
