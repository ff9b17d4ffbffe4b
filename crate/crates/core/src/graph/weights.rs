use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint;
use super::node::{ParamId, ParamInit, ParamRole};
use super::ModelGraph;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Parameter and running-statistic tensors for one graph, indexed by [`ParamId`].
#[derive(Clone, Debug, PartialEq)]
pub struct Weights<T: Float = f32> {
    names: Vec<String>,
    roles: Vec<ParamRole>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Float> Weights<T> {
    /// He-normal convolution and linear weights, unit gamma, zero beta and bias,
    /// zero running mean and unit running variance. Deterministic in `seed`.
    pub fn init(graph: &ModelGraph, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::with_capacity(graph.params().len());
        for p in graph.params() {
            let t = match p.init {
                ParamInit::HeNormal { fan_in } => Tensor::randn(&p.shape, (2.0 / fan_in as f64).sqrt(), &mut rng)?,
                ParamInit::Zeros => Tensor::zeros(&p.shape)?,
                ParamInit::Ones => Tensor::full(&p.shape, T::one())?,
            };
            tensors.push(t);
        }
        Ok(Self {
            names: graph.params().iter().map(|p| p.name.clone()).collect(),
            roles: graph.params().iter().map(|p| p.role).collect(),
            tensors,
        })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn role(&self, id: ParamId) -> ParamRole {
        self.roles[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Ids of the tensors an optimizer updates.
    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|&id| self.roles[id.0] == ParamRole::Trainable)
    }

    /// Number of trainable scalars actually materialized.
    pub fn trainable_scalars(&self) -> usize {
        self.trainable_ids().map(|id| self.tensors[id.0].len()).sum()
    }

    pub fn clear_grads(&mut self) {
        for t in &mut self.tensors {
            t.clear_grad();
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn cast<U: Float>(&self) -> Weights<U> {
        Weights {
            names: self.names.clone(),
            roles: self.roles.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

impl Weights<f32> {
    /// Writes every tensor (including running statistics) as a checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let entries: Vec<(&str, &Tensor<f32>)> = self
            .names
            .iter()
            .map(String::as_str)
            .zip(&self.tensors)
            .collect();
        checkpoint::save(path, &entries)
    }

    /// Loads a checkpoint written for a graph with identical parameter names and shapes.
    pub fn load(graph: &ModelGraph, path: &Path) -> Result<Self> {
        let entries = checkpoint::load(path)?;
        if entries.len() != graph.params().len() {
            return Err(Error::Checkpoint(format!(
                "{} holds {} tensors, the model expects {}",
                path.display(),
                entries.len(),
                graph.params().len()
            )));
        }
        let mut tensors = Vec::with_capacity(entries.len());
        for ((name, t), spec) in entries.into_iter().zip(graph.params()) {
            if name != spec.name || t.shape() != spec.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "entry `{name}` {:?} does not match model parameter `{}` {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
            tensors.push(t);
        }
        Ok(Self {
            names: graph.params().iter().map(|p| p.name.clone()).collect(),
            roles: graph.params().iter().map(|p| p.role).collect(),
            tensors,
        })
    }
}
