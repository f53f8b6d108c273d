//! Dense arrays, reverse-mode differentiation and the transformer-encoder
//! metric predictor.

mod adam;
mod checkpoint;
mod graph;
mod layers;
mod teb;
mod tensor;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use graph::{per_task_mse, Gradients, Graph, Var};
pub use layers::{layer_norm, mlp_forward, self_attention};
pub use teb::{
    Backward, BlockWeights, ForwardPass, MlpWeights, NormWeights, ResidualForm, TebConfig, TebModel, TebParameters,
    TebWeights,
};
pub use tensor::Tensor;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

/// A `T × D` predictor input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FeatureSequence<T: Scalar>(Tensor<T>);

impl<T: Scalar> FeatureSequence<T> {
    pub fn new(rows: usize, dim: usize, data: Vec<T>) -> Result<Self> {
        Ok(Self(Tensor::new(vec![rows, dim], data)?))
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self(Tensor::zeros(&[rows, dim]))
    }

    pub fn len(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[T] {
        let d = self.dim();
        &self.0.data()[i * d..(i + 1) * d]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let d = self.dim();
        &mut self.0.data_mut()[i * d..(i + 1) * d]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }
}

/// Stacks sequences into a `[B, T, D]` batch.
pub fn stack_sequences<T: Scalar>(seqs: &[&FeatureSequence<T>]) -> Result<Tensor<T>> {
    if seqs.is_empty() {
        return Err(Error::Empty("empty batch".into()));
    }
    Tensor::stack(&seqs.iter().map(|s| s.tensor()).collect::<Vec<_>>())
}
