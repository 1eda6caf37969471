//! Multi-head model: one shared feature function, one independent chain head
//! per task. Tasks interact only through the shared features; there are no
//! cross-task potentials, so per-task losses and decodes are independent
//! given the feature matrix.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{self, ChainError, ChainHead};
use crate::corpus::MultiTaskSentence;
use crate::features::{FeatureError, Featurizer, FeaturizerParams};
use crate::math::FlatParams;
use crate::tagset::LabelId;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("sentence has {found} gold sequences, model has {expected} tasks")]
    TaskCountMismatch { expected: usize, found: usize },
    #[error("labels for coupled task {task} have length {found}, expected {expected}")]
    MissingCoupledLabels {
        task: usize,
        expected: usize,
        found: usize,
    },
}

/// Shared featurizer plus per-task chain heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadModel {
    pub featurizer: Featurizer,
    pub heads: Vec<ChainHead>,
}

/// Gradient mirror of [`MultiHeadModel`]; flattens in the same order.
#[derive(Debug, Clone)]
pub struct MultiHeadGradients {
    pub featurizer: FeaturizerParams,
    pub heads: Vec<ChainHead>,
}

impl MultiHeadModel {
    /// Builds a model with zero-initialized heads, one per task size in `ks`.
    pub fn new(featurizer: Featurizer, ks: &[usize]) -> MultiHeadModel {
        let d = featurizer.hidden_dim();
        MultiHeadModel {
            featurizer,
            heads: ks.iter().map(|&k| ChainHead::zeros(k, d)).collect(),
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.heads.len()
    }

    pub fn zero_gradients(&self) -> MultiHeadGradients {
        MultiHeadGradients {
            featurizer: self.featurizer.params.zeros_like(),
            heads: self
                .heads
                .iter()
                .map(|h| ChainHead::zeros(h.num_labels(), h.feature_dim()))
                .collect(),
        }
    }

    /// Sum of per-task chain NLLs on one sentence, with gradients for every
    /// parameter. The featurizer runs forward once; per-task feature
    /// gradients are summed before the single backward pass.
    pub fn loss_and_grad(
        &self,
        sentence: &MultiTaskSentence,
    ) -> Result<(f64, MultiHeadGradients), ModelError> {
        if sentence.gold.len() != self.heads.len() {
            return Err(ModelError::TaskCountMismatch {
                expected: self.heads.len(),
                found: sentence.gold.len(),
            });
        }
        let features = self.featurizer.featurize(&sentence.tokens);
        let mut grads = self.zero_gradients();
        let mut d_features = Array2::zeros(features.raw_dim());
        let mut loss = 0.0;
        for (j, head) in self.heads.iter().enumerate() {
            let g = chain::nll_and_grad(&features, head, &sentence.gold[j])?;
            loss += g.loss;
            d_features += &g.d_features;
            grads.heads[j].a = g.d_a;
            grads.heads[j].b = g.d_b;
            grads.heads[j].start = g.d_start;
            grads.heads[j].stop = g.d_stop;
        }
        grads.featurizer = self
            .featurizer
            .featurize_backward(&sentence.tokens, &d_features)?;
        Ok((loss, grads))
    }

    /// Sum of per-task chain NLLs without gradient bookkeeping. Used for
    /// dev-loss monitoring; agrees with [`Self::loss_and_grad`] exactly.
    pub fn loss(&self, sentence: &MultiTaskSentence) -> Result<f64, ModelError> {
        if sentence.gold.len() != self.heads.len() {
            return Err(ModelError::TaskCountMismatch {
                expected: self.heads.len(),
                found: sentence.gold.len(),
            });
        }
        let features = self.featurizer.featurize(&sentence.tokens);
        let mut loss = 0.0;
        for (j, head) in self.heads.iter().enumerate() {
            let scores = head.emissions(&features)?;
            loss += chain::log_partition(&scores, head)
                - chain::score_path(&scores, head, &sentence.gold[j]);
        }
        Ok(loss)
    }

    /// Independent Viterbi decode per task over the shared features.
    pub fn predict(&self, tokens: &[String]) -> Vec<Vec<LabelId>> {
        let features = self.featurizer.featurize(tokens);
        self.heads
            .iter()
            .map(|head| {
                let scores = head.emissions(&features).expect("head matches featurizer");
                chain::viterbi(&scores, head).0
            })
            .collect()
    }
}

impl FlatParams for MultiHeadModel {
    fn to_flat(&self) -> Vec<f64> {
        let mut out = self.featurizer.params.to_flat();
        for h in &self.heads {
            out.extend(h.to_flat());
        }
        out
    }

    fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = self.featurizer.params.to_flat().len();
        self.featurizer.params.assign_flat(&flat[..offset]);
        for h in &mut self.heads {
            let n = h.to_flat().len();
            h.assign_flat(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat vector length mismatch");
    }
}

impl FlatParams for MultiHeadGradients {
    fn to_flat(&self) -> Vec<f64> {
        let mut out = self.featurizer.to_flat();
        for h in &self.heads {
            out.extend(h.to_flat());
        }
        out
    }

    fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = self.featurizer.to_flat().len();
        self.featurizer.assign_flat(&flat[..offset]);
        for h in &mut self.heads {
            let n = h.to_flat().len();
            h.assign_flat(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat vector length mismatch");
    }
}
