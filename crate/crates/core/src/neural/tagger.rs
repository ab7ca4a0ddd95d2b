use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{backprop_sequence, run_sequence, CellGradients, LstmCell};
use super::NeuralError;
use crate::container::{ContainerReader, ContainerWriter};
use crate::crf::chain::{self, log_sum_exp, Constraints};
use crate::embeddings::{EmbeddingTable, OovPolicy};
use crate::iob::{IobTag, TaggedSentence, NUM_TAGS};
use crate::tokenizer::Token;

/// Loss, gradient of the scores, gradient of the transitions (CRF head).
type SentenceLoss = (f64, Array2<f64>, Option<Array2<f64>>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    /// Independent per-token softmax.
    Softmax,
    /// Linear-chain CRF over the projected scores.
    Crf,
}

impl HeadKind {
    pub fn model_kind(self) -> &'static str {
        match self {
            HeadKind::Softmax => "bilstm",
            HeadKind::Crf => "bilstm-crf",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputHead {
    pub kind: HeadKind,
    /// `[labels × 2H]`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    /// `[from × to]`, only used by the CRF head.
    pub transitions: Array2<f64>,
}

/// Embedding lookup, forward and backward LSTMs, and an output head over the
/// nine IOB2 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmTagger {
    pub embedding: EmbeddingTable,
    pub train_embeddings: bool,
    pub forward_cell: LstmCell,
    pub backward_cell: LstmCell,
    pub head: OutputHead,
}

/// Gradients with the same layout as the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embedding: Option<Array2<f64>>,
    pub forward_cell: CellGradients,
    pub backward_cell: CellGradients,
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
    pub transitions: Option<Array2<f64>>,
}

impl Gradients {
    /// Flat views in the order of [`BiLstmTagger::params_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        if let Some(e) = &self.embedding {
            out.push(e.as_slice().expect("standard layout"));
        }
        for c in [&self.forward_cell, &self.backward_cell] {
            out.push(c.w.as_slice().expect("standard layout"));
            out.push(c.u.as_slice().expect("standard layout"));
            out.push(c.b.as_slice().expect("standard layout"));
        }
        out.push(self.head_w.as_slice().expect("standard layout"));
        out.push(self.head_b.as_slice().expect("standard layout"));
        if let Some(t) = &self.transitions {
            out.push(t.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        if let Some(e) = &mut self.embedding {
            out.push(e.as_slice_mut().expect("standard layout"));
        }
        for c in [&mut self.forward_cell, &mut self.backward_cell] {
            out.push(c.w.as_slice_mut().expect("standard layout"));
            out.push(c.u.as_slice_mut().expect("standard layout"));
            out.push(c.b.as_slice_mut().expect("standard layout"));
        }
        out.push(self.head_w.as_slice_mut().expect("standard layout"));
        out.push(self.head_b.as_slice_mut().expect("standard layout"));
        if let Some(t) = &mut self.transitions {
            out.push(t.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescale so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip(&mut self, max_norm: f64) -> f64 {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            let scale = max_norm / n;
            for s in self.slices_mut() {
                s.iter_mut().for_each(|v| *v *= scale);
            }
        }
        n
    }

    fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// Forward activations of one sentence.
struct Pass {
    rows: Vec<Option<usize>>,
    fwd: super::lstm::SequenceTrace,
    bwd: super::lstm::SequenceTrace,
    features: Array2<f64>,
    scores: Array2<f64>,
}

impl BiLstmTagger {
    /// Fresh tagger with Glorot-uniform weights drawn from `seed`.
    pub fn new(
        embedding: EmbeddingTable,
        train_embeddings: bool,
        hidden_dim: usize,
        head: HeadKind,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = embedding.dim();
        let forward_cell = LstmCell::init(d, hidden_dim, &mut rng);
        let backward_cell = LstmCell::init(d, hidden_dim, &mut rng);
        let limit = (6.0 / (2 * hidden_dim + NUM_TAGS) as f64).sqrt();
        let w = Array2::from_shape_simple_fn((NUM_TAGS, 2 * hidden_dim), || {
            rng.gen_range(-limit..limit)
        });
        BiLstmTagger {
            embedding,
            train_embeddings,
            forward_cell,
            backward_cell,
            head: OutputHead {
                kind: head,
                w,
                b: Array1::zeros(NUM_TAGS),
                transitions: Array2::zeros((NUM_TAGS, NUM_TAGS)),
            },
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.forward_cell.hidden_dim()
    }

    pub fn head_kind(&self) -> HeadKind {
        self.head.kind
    }

    /// Flat mutable views of every trainable parameter block. Embeddings are
    /// included only when trainable; transitions only for the CRF head.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        if self.train_embeddings {
            out.push(
                self.embedding
                    .matrix_mut()
                    .as_slice_mut()
                    .expect("standard layout"),
            );
        }
        for c in [&mut self.forward_cell, &mut self.backward_cell] {
            out.push(c.w.as_slice_mut().expect("standard layout"));
            out.push(c.u.as_slice_mut().expect("standard layout"));
            out.push(c.b.as_slice_mut().expect("standard layout"));
        }
        out.push(self.head.w.as_slice_mut().expect("standard layout"));
        out.push(self.head.b.as_slice_mut().expect("standard layout"));
        if self.head.kind == HeadKind::Crf {
            out.push(
                self.head
                    .transitions
                    .as_slice_mut()
                    .expect("standard layout"),
            );
        }
        out
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            embedding: self
                .train_embeddings
                .then(|| Array2::zeros(self.embedding.matrix().dim())),
            forward_cell: CellGradients::zeros_like(&self.forward_cell),
            backward_cell: CellGradients::zeros_like(&self.backward_cell),
            head_w: Array2::zeros(self.head.w.dim()),
            head_b: Array1::zeros(self.head.b.len()),
            transitions: (self.head.kind == HeadKind::Crf)
                .then(|| Array2::zeros(self.head.transitions.dim())),
        }
    }

    fn embed(&self, tokens: &[Token]) -> (Array2<f64>, Vec<Option<usize>>) {
        let d = self.embedding.dim();
        let mut x = Array2::zeros((tokens.len(), d));
        let mut rows = Vec::with_capacity(tokens.len());
        for (t, tok) in tokens.iter().enumerate() {
            match self.embedding.row_index(&tok.surface) {
                Some(r) => {
                    x.row_mut(t).assign(&self.embedding.matrix().row(r));
                    rows.push(Some(r));
                }
                None => {
                    let v = self.embedding.oov_vector(&tok.surface);
                    x.row_mut(t).assign(&Array1::from(v));
                    rows.push(None);
                }
            }
        }
        (x, rows)
    }

    fn run(&self, tokens: &[Token]) -> Result<Pass, NeuralError> {
        if tokens.is_empty() {
            return Err(NeuralError::EmptySentence);
        }
        let (x, rows) = self.embed(tokens);
        let fwd = run_sequence(&self.forward_cell, x.view());
        let x_rev = x.slice(s![..;-1, ..]);
        let bwd = run_sequence(&self.backward_cell, x_rev);
        let bwd_hidden = bwd.hidden.slice(s![..;-1, ..]);
        let features = concatenate(Axis(1), &[fwd.hidden.view(), bwd_hidden])
            .expect("matching row counts");
        let scores = features.dot(&self.head.w.t()) + &self.head.b;
        Ok(Pass {
            rows,
            fwd,
            bwd,
            features,
            scores,
        })
    }

    /// Per-token label scores, `T × 9`: probabilities for the softmax head,
    /// raw state scores for the CRF head.
    pub fn forward_sentence(&self, tokens: &[Token]) -> Result<Array2<f64>, NeuralError> {
        let mut scores = self.run(tokens)?.scores;
        if self.head.kind == HeadKind::Softmax {
            for mut row in scores.rows_mut() {
                let z = log_sum_exp(row.iter().copied());
                row.mapv_inplace(|v| (v - z).exp());
            }
        }
        Ok(scores)
    }

    fn gold_indices(sentence: &TaggedSentence) -> Result<Vec<usize>, NeuralError> {
        if sentence.tags.len() != sentence.tokens.len() {
            return Err(NeuralError::Shape(format!(
                "{} tokens but {} tags",
                sentence.tokens.len(),
                sentence.tags.len()
            )));
        }
        Ok(sentence.tags.iter().map(|t| t.index()).collect())
    }

    /// Summed loss of one sentence and the gradient of its scores (and
    /// transitions, for the CRF head).
    fn sentence_loss(
        &self,
        scores: &Array2<f64>,
        gold: &[usize],
    ) -> Result<SentenceLoss, NeuralError> {
        match self.head.kind {
            HeadKind::Softmax => {
                let mut d = Array2::zeros(scores.dim());
                let mut loss = 0.0;
                for (t, row) in scores.rows().into_iter().enumerate() {
                    let z = log_sum_exp(row.iter().copied());
                    loss += z - row[gold[t]];
                    let mut drow = d.row_mut(t);
                    drow.assign(&row.mapv(|v| (v - z).exp()));
                    drow[gold[t]] -= 1.0;
                }
                Ok((loss, d, None))
            }
            HeadKind::Crf => {
                let trans = self.head.transitions.view();
                let m = chain::marginals(scores.view(), trans)?;
                let gold_score = chain::sequence_score(scores.view(), trans, gold);
                let mut d = m.unary;
                for (t, &y) in gold.iter().enumerate() {
                    d[[t, y]] -= 1.0;
                }
                let mut dt = m.pairwise;
                for p in gold.windows(2) {
                    dt[[p[0], p[1]]] -= 1.0;
                }
                Ok((m.log_z - gold_score, d, Some(dt)))
            }
        }
    }

    /// Normalizer for a batch: tokens for the softmax head, sentences for CRF.
    fn batch_denominator(&self, batch: &[TaggedSentence]) -> usize {
        match self.head.kind {
            HeadKind::Softmax => batch.iter().map(TaggedSentence::len).sum(),
            HeadKind::Crf => batch.len(),
        }
    }

    /// Mean per-token cross-entropy (softmax head) or mean per-sentence
    /// negative log-likelihood (CRF head).
    pub fn loss(&self, batch: &[TaggedSentence]) -> Result<f64, NeuralError> {
        let den = self.batch_denominator(batch);
        if den == 0 {
            return Err(NeuralError::EmptySentence);
        }
        let mut total = 0.0;
        for s in batch {
            let gold = Self::gold_indices(s)?;
            let pass = self.run(&s.tokens)?;
            total += self.sentence_loss(&pass.scores, &gold)?.0;
        }
        Ok(total / den as f64)
    }

    /// Batch loss as in [`loss`](Self::loss) and its gradient with respect to
    /// every trainable parameter.
    pub fn loss_and_gradient(&self, batch: &[TaggedSentence]) -> Result<(f64, Gradients), NeuralError> {
        let den = self.batch_denominator(batch);
        if den == 0 {
            return Err(NeuralError::EmptySentence);
        }
        let h = self.hidden_dim();
        let mut grads = self.zero_gradients();
        let mut total = 0.0;
        for s in batch {
            let gold = Self::gold_indices(s)?;
            let pass = self.run(&s.tokens)?;
            let (loss, d_scores, d_trans) = self.sentence_loss(&pass.scores, &gold)?;
            total += loss;
            if let (Some(g), Some(dt)) = (&mut grads.transitions, d_trans) {
                *g += &dt;
            }
            grads.head_w += &d_scores.t().dot(&pass.features);
            grads.head_b += &d_scores.sum_axis(Axis(0));
            let d_features = d_scores.dot(&self.head.w);
            let d_fwd = d_features.slice(s![.., ..h]);
            let d_bwd_rev = d_features.slice(s![..;-1, h..]);
            let dx_f = backprop_sequence(&self.forward_cell, &pass.fwd, d_fwd, &mut grads.forward_cell);
            let dx_b_rev = backprop_sequence(
                &self.backward_cell,
                &pass.bwd,
                d_bwd_rev,
                &mut grads.backward_cell,
            );
            if let Some(ge) = &mut grads.embedding {
                let dx_b = dx_b_rev.slice(s![..;-1, ..]);
                for (t, row) in pass.rows.iter().enumerate() {
                    if let Some(r) = *row {
                        let mut g = ge.row_mut(r);
                        g += &dx_f.row(t);
                        g += &dx_b.row(t);
                    }
                }
            }
        }
        grads.scale(1.0 / den as f64);
        Ok((total / den as f64, grads))
    }

    /// Softmax head: per-token argmax (ties to the lower label). CRF head:
    /// Viterbi over the projected scores, optionally restricted to valid
    /// IOB2 paths.
    pub fn predict(&self, tokens: &[Token], constrained: bool) -> Result<Vec<IobTag>, NeuralError> {
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let scores = self.run(tokens)?.scores;
        let path = match self.head.kind {
            HeadKind::Softmax => scores
                .rows()
                .into_iter()
                .map(|row| {
                    let mut best = 0;
                    for (i, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = i;
                        }
                    }
                    best
                })
                .collect(),
            HeadKind::Crf => {
                let c = constrained.then(|| Constraints::iob2(&IobTag::ALL));
                chain::viterbi(scores.view(), self.head.transitions.view(), c.as_ref())?.0
            }
        };
        Ok(path
            .into_iter()
            .map(|i| IobTag::ALL[i])
            .collect())
    }

    pub fn to_container(&self) -> ContainerWriter {
        let labels: Vec<String> = IobTag::ALL.iter().map(ToString::to_string).collect();
        let oov = serde_json::to_string(&self.embedding.oov_policy).expect("enum");
        let mut w = ContainerWriter::new();
        w.string(*b"KIND", self.head.kind.model_kind())
            .strings(*b"LABL", &labels)
            .strings(*b"EMBW", self.embedding.words())
            .matrix(*b"EMBM", self.embedding.matrix())
            .strings(
                *b"EMBO",
                &[
                    oov,
                    self.embedding.oov_seed().to_string(),
                    self.train_embeddings.to_string(),
                ],
            )
            .matrix(*b"FWWI", &self.forward_cell.w)
            .matrix(*b"FWUR", &self.forward_cell.u)
            .vector(*b"FWBI", &self.forward_cell.b)
            .matrix(*b"BWWI", &self.backward_cell.w)
            .matrix(*b"BWUR", &self.backward_cell.u)
            .vector(*b"BWBI", &self.backward_cell.b)
            .matrix(*b"HDWT", &self.head.w)
            .vector(*b"HDBI", &self.head.b)
            .matrix(*b"TRAN", &self.head.transitions);
        w
    }

    pub fn save(&self, path: &Path) -> Result<(), NeuralError> {
        Ok(self.to_container().write_atomic(path)?)
    }

    pub fn from_container(r: &ContainerReader) -> Result<Self, NeuralError> {
        let kind = match r.string(*b"KIND")?.as_str() {
            "bilstm" => HeadKind::Softmax,
            "bilstm-crf" => HeadKind::Crf,
            other => return Err(NeuralError::Format(format!("not a neural tagger: `{other}`"))),
        };
        let labels = r.strings(*b"LABL")?;
        let expected: Vec<String> = IobTag::ALL.iter().map(ToString::to_string).collect();
        if labels != expected {
            return Err(NeuralError::Format("unexpected label set".into()));
        }
        let opts = r.strings(*b"EMBO")?;
        let [oov, seed, trainable] = opts.as_slice() else {
            return Err(NeuralError::Format("bad embedding options".into()));
        };
        let oov: OovPolicy =
            serde_json::from_str(oov).map_err(|e| NeuralError::Format(e.to_string()))?;
        let seed: u64 = seed
            .parse()
            .map_err(|_| NeuralError::Format("bad OOV seed".into()))?;
        let embedding = EmbeddingTable::from_rows(r.strings(*b"EMBW")?, r.matrix(*b"EMBM")?)
            .map_err(|e| NeuralError::Format(e.to_string()))?
            .with_oov(oov, seed);
        let cell = |w: [u8; 4], u: [u8; 4], b: [u8; 4]| -> Result<LstmCell, NeuralError> {
            Ok(LstmCell {
                w: r.matrix(w)?,
                u: r.matrix(u)?,
                b: r.vector(b)?,
            })
        };
        let tagger = BiLstmTagger {
            embedding,
            train_embeddings: trainable == "true",
            forward_cell: cell(*b"FWWI", *b"FWUR", *b"FWBI")?,
            backward_cell: cell(*b"BWWI", *b"BWUR", *b"BWBI")?,
            head: OutputHead {
                kind,
                w: r.matrix(*b"HDWT")?,
                b: r.vector(*b"HDBI")?,
                transitions: r.matrix(*b"TRAN")?,
            },
        };
        let h = tagger.hidden_dim();
        let d = tagger.embedding.dim();
        let ok = tagger.forward_cell.w.dim() == (4 * h, d)
            && tagger.backward_cell.w.dim() == (4 * h, d)
            && tagger.backward_cell.u.dim() == (4 * h, h)
            && tagger.forward_cell.b.len() == 4 * h
            && tagger.backward_cell.b.len() == 4 * h
            && tagger.head.w.dim() == (NUM_TAGS, 2 * h)
            && tagger.head.b.len() == NUM_TAGS
            && tagger.head.transitions.dim() == (NUM_TAGS, NUM_TAGS);
        if !ok {
            return Err(NeuralError::Format("inconsistent parameter shapes".into()));
        }
        Ok(tagger)
    }

    pub fn load(path: &Path) -> Result<Self, NeuralError> {
        Self::from_container(&ContainerReader::read(path)?)
    }
}
