use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tagger::BiLstmTagger;
use super::NeuralError;
use crate::iob::TaggedSentence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub seed: u64,
    pub gradient_clip_norm: f64,
    /// Accepted for forward compatibility; currently has no effect.
    pub dropout: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 50,
            patience: 4,
            batch_size: 32,
            hidden_dim: 100,
            seed: 0,
            gradient_clip_norm: 5.0,
            dropout: 0.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m: &str| Err(NeuralError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("epsilon must be positive");
        }
        if self.batch_size == 0 || self.hidden_dim == 0 {
            return bad("batch_size and hidden_dim must be positive");
        }
        if self.gradient_clip_norm.is_nan() || self.gradient_clip_norm <= 0.0 {
            return bad("gradient_clip_norm must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Rescale `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Adam {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. `params` and `grads` must have the same block layout on
    /// every call.
    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient block count");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            assert_eq!(p.len(), g.len(), "block {k} length");
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

/// Patience-based early stopping on a monitored loss. Only strict
/// improvements reset the counter.
#[derive(Debug, Clone)]
pub struct EarlyStopping<P> {
    pub patience: usize,
    best: Option<(usize, f64, P)>,
    wait: usize,
}

impl<P> EarlyStopping<P> {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            wait: 0,
        }
    }

    /// Record the loss for `epoch`; `snapshot` is taken only on improvement.
    /// Returns `true` when training should stop.
    pub fn observe(&mut self, epoch: usize, loss: f64, snapshot: impl FnOnce() -> P) -> bool {
        let improved = match &self.best {
            None => true,
            Some((_, best, _)) => loss < *best,
        };
        if improved {
            self.best = Some((epoch, loss, snapshot()));
            self.wait = 0;
        } else {
            self.wait += 1;
        }
        self.wait >= self.patience
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.as_ref().map(|b| b.0)
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.1)
    }

    pub fn into_best(self) -> Option<(usize, f64, P)> {
        self.best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for r in &self.epochs {
            writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.val_loss).expect("string write");
        }
        out
    }
}

/// Train on `train`, monitoring the loss on `validation` (or on `train` when
/// `validation` is empty). The tagger ends with the best-epoch parameters.
pub fn fit(
    tagger: &mut BiLstmTagger,
    train: &[TaggedSentence],
    validation: &[TaggedSentence],
    config: &FitConfig,
) -> Result<History, NeuralError> {
    let monitor: Vec<TaggedSentence> = if validation.iter().any(|s| !s.is_empty()) {
        validation.iter().filter(|s| !s.is_empty()).cloned().collect()
    } else {
        train.iter().filter(|s| !s.is_empty()).cloned().collect()
    };
    fit_with_validator(tagger, train, config, |t| t.loss(&monitor).unwrap_or(f64::INFINITY))
}

/// As [`fit`], with the monitored loss computed by `validate` after every
/// epoch.
pub fn fit_with_validator(
    tagger: &mut BiLstmTagger,
    train: &[TaggedSentence],
    config: &FitConfig,
    mut validate: impl FnMut(&BiLstmTagger) -> f64,
) -> Result<History, NeuralError> {
    config.validate()?;
    let train: Vec<&TaggedSentence> = train.iter().filter(|s| !s.is_empty()).collect();
    if train.is_empty() {
        return Err(NeuralError::EmptySentence);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.learning_rate, config.beta1, config.beta2, config.epsilon);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut batch = Vec::with_capacity(config.batch_size);

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train[i].clone()));
            let (loss, mut grads) = tagger.loss_and_gradient(&batch)?;
            if !loss.is_finite() {
                return Err(NeuralError::NonFinite { epoch, batch: b });
            }
            grads.clip(config.gradient_clip_norm);
            adam.update(&mut tagger.params_mut(), &grads.slices());
            loss_sum += loss;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        let val_loss = validate(tagger);
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        history.stopped_epoch = epoch;
        if stopper.observe(epoch, val_loss, || tagger.clone()) {
            break;
        }
    }
    if let Some((best_epoch, _, best)) = stopper.into_best() {
        history.best_epoch = best_epoch;
        *tagger = best;
    }
    Ok(history)
}
