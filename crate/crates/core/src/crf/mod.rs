//! Feature-based linear-chain CRF: windowed features, maximum-likelihood
//! training with L-BFGS, Viterbi decoding.

pub mod chain;
pub mod features;
pub mod lbfgs;
mod model;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{extract_features, FeatureTemplate, FeatureVector};
pub use model::{nll_and_gradient, CrfModel, EncodedSequence, Objective, MODEL_KIND};

use crate::container::ContainerError;
use crate::iob::{IobTag, TaggedSentence};
use lbfgs::{LbfgsConfig, LbfgsError, Termination};

#[derive(Debug, Error)]
pub enum CrfError {
    #[error(transparent)]
    Chain(#[from] chain::ChainError),
    #[error("label {0} is not in the model's label set")]
    UnknownLabel(IobTag),
    #[error("empty training batch or empty sentence")]
    EmptyBatch,
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Optimizer(#[from] LbfgsError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("malformed model: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub l2: f64,
    pub l1: f64,
    pub max_iterations: usize,
    /// Relative objective decrease over `convergence_period` iterations below
    /// which training stops.
    pub convergence_tol: f64,
    pub convergence_period: usize,
    pub lbfgs_memory: usize,
    pub window_radius: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            l2: 1.0,
            l1: 0.0,
            max_iterations: 100,
            convergence_tol: 1e-5,
            convergence_period: 10,
            lbfgs_memory: 6,
            window_radius: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CrfError> {
        let bad = |m: &str| Err(CrfError::Config(m.to_string()));
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be finite and non-negative");
        }
        if !(self.l1 >= 0.0 && self.l1.is_finite()) {
            return bad("l1 must be finite and non-negative");
        }
        if self.convergence_tol.is_nan() || self.convergence_tol < 0.0 {
            return bad("convergence_tol must be non-negative");
        }
        if self.lbfgs_memory == 0 || self.convergence_period == 0 {
            return bad("lbfgs_memory and convergence_period must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainTrace {
    /// Objective at initialization and after every accepted iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    pub num_features: usize,
}

/// Train over all 9 IOB2 labels; see [`train_with_trace`].
pub fn train(sentences: &[TaggedSentence], config: &TrainConfig) -> Result<CrfModel, CrfError> {
    train_with_trace(sentences, config).map(|(m, _)| m)
}

/// Build the feature index from the training sentences (first-occurrence
/// order), then minimize the regularized NLL from all-zero weights.
pub fn train_with_trace(
    sentences: &[TaggedSentence],
    config: &TrainConfig,
) -> Result<(CrfModel, TrainTrace), CrfError> {
    config.validate()?;
    let sentences: Vec<&TaggedSentence> = sentences.iter().filter(|s| !s.is_empty()).collect();
    if sentences.is_empty() {
        return Err(CrfError::EmptyBatch);
    }
    let template = FeatureTemplate {
        radius: config.window_radius,
    };
    let labels = IobTag::ALL.to_vec();

    let mut names: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut examples = Vec::with_capacity(sentences.len());
    for s in &sentences {
        let feats = template.extract_sentence(&s.sentence());
        let encoded = feats
            .into_iter()
            .map(|fs| {
                fs.into_iter()
                    .map(|f| {
                        let next = names.len();
                        *index.entry(f).or_insert_with_key(|k| {
                            names.push(k.clone());
                            next
                        })
                    })
                    .collect()
            })
            .collect();
        let labels = s.tags.iter().map(|t| t.index()).collect();
        examples.push(EncodedSequence {
            features: encoded,
            labels,
        });
    }

    let mut model = CrfModel::zeros(labels, template, names);
    let objective = Objective {
        examples: &examples,
        num_features: model.num_features(),
        num_labels: model.num_labels(),
        l2: config.l2,
    };
    let lbfgs = LbfgsConfig {
        memory: config.lbfgs_memory,
        max_iterations: config.max_iterations,
        tol: config.convergence_tol,
        period: config.convergence_period,
        l1: config.l1,
        ..Default::default()
    };
    let result = lbfgs::minimize(
        |w, g| objective.evaluate(w, g),
        vec![0.0; objective.num_params()],
        &lbfgs,
    )?;
    model.set_params(&result.x);
    let trace = TrainTrace {
        objective: result.history,
        iterations: result.iterations,
        termination: result.termination,
        num_features: model.num_features(),
    };
    Ok((model, trace))
}
