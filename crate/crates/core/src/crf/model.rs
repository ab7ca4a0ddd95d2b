use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use super::chain::{self, Constraints};
use super::features::{FeatureTemplate, FeatureVector};
use super::{CrfError, TrainConfig};
use crate::container::{ContainerReader, ContainerWriter};
use crate::iob::IobTag;
use crate::tokenizer::Sentence;

pub const MODEL_KIND: &str = "crf";

/// Log-linear chain model over binary state features and label bigrams.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfModel {
    labels: Vec<IobTag>,
    template: FeatureTemplate,
    feature_names: Vec<String>,
    feature_index: HashMap<String, usize>,
    /// `[num_features × num_labels]`
    state_weights: Array2<f64>,
    /// `[from × to]`
    transition_weights: Array2<f64>,
}

/// A sentence with features resolved to indices and (optionally) gold labels
/// resolved to label indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSequence {
    pub features: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
}

impl CrfModel {
    /// All-zero model over the given labels and feature names.
    pub fn zeros(labels: Vec<IobTag>, template: FeatureTemplate, feature_names: Vec<String>) -> Self {
        let l = labels.len();
        let feature_index = feature_names
            .iter()
            .enumerate()
            .map(|(i, f)| (f.clone(), i))
            .collect();
        CrfModel {
            state_weights: Array2::zeros((feature_names.len(), l)),
            transition_weights: Array2::zeros((l, l)),
            labels,
            template,
            feature_names,
            feature_index,
        }
    }

    pub fn labels(&self) -> &[IobTag] {
        &self.labels
    }

    pub fn template(&self) -> FeatureTemplate {
        self.template
    }

    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn state_weights(&self) -> &Array2<f64> {
        &self.state_weights
    }

    pub fn state_weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.state_weights
    }

    pub fn transition_weights(&self) -> &Array2<f64> {
        &self.transition_weights
    }

    pub fn transition_weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.transition_weights
    }

    pub fn num_params(&self) -> usize {
        self.state_weights.len() + self.transition_weights.len()
    }

    /// State weights (row-major) followed by transitions.
    pub fn params(&self) -> Vec<f64> {
        self.state_weights
            .iter()
            .chain(self.transition_weights.iter())
            .copied()
            .collect()
    }

    pub fn set_params(&mut self, w: &[f64]) {
        assert_eq!(w.len(), self.num_params());
        let split = self.state_weights.len();
        self.state_weights
            .iter_mut()
            .zip(&w[..split])
            .for_each(|(a, b)| *a = *b);
        self.transition_weights
            .iter_mut()
            .zip(&w[split..])
            .for_each(|(a, b)| *a = *b);
    }

    pub fn label_index(&self, tag: IobTag) -> Option<usize> {
        self.labels.iter().position(|&t| t == tag)
    }

    /// Map feature strings to indices; features unseen in training are dropped.
    pub fn encode_features(&self, features: &[FeatureVector]) -> Vec<Vec<usize>> {
        features
            .iter()
            .map(|fs| {
                fs.iter()
                    .filter_map(|f| self.feature_index.get(f).copied())
                    .collect()
            })
            .collect()
    }

    pub fn encode_labels(&self, tags: &[IobTag]) -> Result<Vec<usize>, CrfError> {
        tags.iter()
            .map(|&t| self.label_index(t).ok_or(CrfError::UnknownLabel(t)))
            .collect()
    }

    /// Per-token state scores, `T × L`.
    pub fn state_scores(&self, features: &[Vec<usize>]) -> Array2<f64> {
        emission_scores(
            self.state_weights.as_slice().expect("standard layout"),
            self.num_labels(),
            features,
        )
    }

    pub fn log_partition(&self, features: &[FeatureVector]) -> Result<f64, CrfError> {
        let scores = self.state_scores(&self.encode_features(features));
        Ok(chain::log_partition(
            scores.view(),
            self.transition_weights.view(),
        )?)
    }

    /// Best tag sequence. With `constrained`, IOB2-invalid transitions are
    /// excluded from the search.
    pub fn viterbi(&self, features: &[FeatureVector], constrained: bool) -> Result<Vec<IobTag>, CrfError> {
        let scores = self.state_scores(&self.encode_features(features));
        let constraints = constrained.then(|| Constraints::iob2(&self.labels));
        let (path, _) = chain::viterbi(
            scores.view(),
            self.transition_weights.view(),
            constraints.as_ref(),
        )?;
        Ok(path.into_iter().map(|i| self.labels[i]).collect())
    }

    /// Extract features and decode a sentence.
    pub fn tag(&self, sentence: &Sentence, constrained: bool) -> Result<Vec<IobTag>, CrfError> {
        self.viterbi(&self.template.extract_sentence(sentence), constrained)
    }

    pub fn to_container(&self) -> ContainerWriter {
        let labels: Vec<String> = self.labels.iter().map(ToString::to_string).collect();
        let mut w = ContainerWriter::new();
        w.string(*b"KIND", MODEL_KIND)
            .strings(*b"LABL", &labels)
            .string(*b"TMPL", &self.template.radius.to_string())
            .strings(*b"FEAT", &self.feature_names)
            .matrix(*b"STAT", &self.state_weights)
            .matrix(*b"TRAN", &self.transition_weights);
        w
    }

    pub fn save(&self, path: &Path) -> Result<(), CrfError> {
        Ok(self.to_container().write_atomic(path)?)
    }

    pub fn from_container(r: &ContainerReader) -> Result<Self, CrfError> {
        r.expect_kind(MODEL_KIND)?;
        let labels = r
            .strings(*b"LABL")?
            .iter()
            .map(|s| s.parse::<IobTag>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CrfError::Format(e.to_string()))?;
        let radius = r
            .string(*b"TMPL")?
            .parse()
            .map_err(|_| CrfError::Format("bad template radius".into()))?;
        let feature_names = r.strings(*b"FEAT")?;
        let state = r.matrix(*b"STAT")?;
        let trans = r.matrix(*b"TRAN")?;
        let l = labels.len();
        if state.dim() != (feature_names.len(), l) || trans.dim() != (l, l) {
            return Err(CrfError::Format("weight shapes do not match tables".into()));
        }
        if state.iter().chain(trans.iter()).any(|v| !v.is_finite()) {
            return Err(CrfError::Format("non-finite weight".into()));
        }
        let mut model = CrfModel::zeros(labels, FeatureTemplate { radius }, feature_names);
        model.state_weights = state;
        model.transition_weights = trans;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self, CrfError> {
        Self::from_container(&ContainerReader::read(path)?)
    }

    /// Human-readable dump; numbers use shortest round-trip formatting so the
    /// dump is lossless. Zero state weights are omitted.
    pub fn dump_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "kind\t{MODEL_KIND}").unwrap();
        writeln!(out, "radius\t{}", self.template.radius).unwrap();
        let labels: Vec<String> = self.labels.iter().map(ToString::to_string).collect();
        writeln!(out, "labels\t{}", labels.join("\t")).unwrap();
        for (a, from) in labels.iter().enumerate() {
            for (b, to) in labels.iter().enumerate() {
                writeln!(out, "trans\t{from}\t{to}\t{:?}", self.transition_weights[[a, b]]).unwrap();
            }
        }
        for (f, name) in self.feature_names.iter().enumerate() {
            for (y, label) in labels.iter().enumerate() {
                let w = self.state_weights[[f, y]];
                if w != 0.0 {
                    writeln!(out, "state\t{name}\t{label}\t{w:?}").unwrap();
                }
            }
        }
        out
    }
}

fn emission_scores(state: &[f64], num_labels: usize, features: &[Vec<usize>]) -> Array2<f64> {
    let mut scores = Array2::zeros((features.len(), num_labels));
    for (t, fs) in features.iter().enumerate() {
        let mut row = scores.row_mut(t);
        for &f in fs {
            let w = &state[f * num_labels..(f + 1) * num_labels];
            row.iter_mut().zip(w).for_each(|(r, w)| *r += w);
        }
    }
    scores
}

/// Regularized negative log-likelihood over a fixed set of encoded sequences,
/// as a function of the flat parameter vector (state weights, then
/// transitions).
pub struct Objective<'a> {
    pub examples: &'a [EncodedSequence],
    pub num_features: usize,
    pub num_labels: usize,
    pub l2: f64,
}

/// Sentences are summed in this many fixed, contiguous chunks; the chunk
/// boundaries do not depend on the thread count, so results are
/// reproducible.
const REDUCTION_CHUNKS: usize = 16;

impl Objective<'_> {
    pub fn num_params(&self) -> usize {
        self.num_features * self.num_labels + self.num_labels * self.num_labels
    }

    /// Smooth part of the objective (NLL + L2); writes its gradient.
    pub fn evaluate(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.num_params();
        assert_eq!(w.len(), n);
        let chunk = self.examples.len().div_ceil(REDUCTION_CHUNKS).max(1);
        let partials: Vec<(f64, Vec<f64>)> = self
            .examples
            .par_chunks(chunk)
            .map(|part| {
                let mut g = vec![0.0; n];
                let v = part.iter().map(|ex| self.accumulate(w, ex, &mut g)).sum::<f64>();
                (v, g)
            })
            .collect();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut value = 0.0;
        for (v, g) in partials {
            value += v;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        if self.l2 > 0.0 {
            for (gi, wi) in grad.iter_mut().zip(w) {
                value += 0.5 * self.l2 * wi * wi;
                *gi += self.l2 * wi;
            }
        }
        value
    }

    /// Adds one sequence's NLL gradient into `grad` and returns its NLL.
    fn accumulate(&self, w: &[f64], ex: &EncodedSequence, grad: &mut [f64]) -> f64 {
        let l = self.num_labels;
        let split = self.num_features * l;
        let state = &w[..split];
        let trans = ArrayView2::from_shape((l, l), &w[split..]).expect("transition block");
        let scores = emission_scores(state, l, &ex.features);
        let m = chain::marginals(scores.view(), trans).expect("non-empty sequence");
        let gold = chain::sequence_score(scores.view(), trans, &ex.labels);

        for (t, fs) in ex.features.iter().enumerate() {
            let p = m.unary.row(t);
            for &f in fs {
                let g = &mut grad[f * l..(f + 1) * l];
                g.iter_mut().zip(p.iter()).for_each(|(gi, pi)| *gi += pi);
                g[ex.labels[t]] -= 1.0;
            }
        }
        let gt = &mut grad[split..];
        gt.iter_mut()
            .zip(m.pairwise.iter())
            .for_each(|(gi, pi)| *gi += pi);
        for pair in ex.labels.windows(2) {
            gt[pair[0] * l + pair[1]] -= 1.0;
        }
        m.log_z - gold
    }
}

/// `Σ(log Z − score(gold)) + (l2/2)‖w‖² + l1‖w‖₁` and the gradient of the
/// smooth part (the L1 term is handled by the orthant-wise optimizer).
pub fn nll_and_gradient(
    model: &CrfModel,
    batch: &[(Vec<FeatureVector>, Vec<IobTag>)],
    config: &TrainConfig,
) -> Result<(f64, Vec<f64>), CrfError> {
    if batch.is_empty() {
        return Err(CrfError::EmptyBatch);
    }
    let examples = batch
        .iter()
        .map(|(features, tags)| {
            if features.is_empty() || features.len() != tags.len() {
                return Err(CrfError::EmptyBatch);
            }
            Ok(EncodedSequence {
                features: model.encode_features(features),
                labels: model.encode_labels(tags)?,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let objective = Objective {
        examples: &examples,
        num_features: model.num_features(),
        num_labels: model.num_labels(),
        l2: config.l2,
    };
    let w = model.params();
    let mut grad = vec![0.0; w.len()];
    let mut value = objective.evaluate(&w, &mut grad);
    value += config.l1 * w.iter().map(|v| v.abs()).sum::<f64>();
    Ok((value, grad))
}
