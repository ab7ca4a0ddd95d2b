//! Sequence labeling for rare-disease and clinical-manifestation mentions.
//!
//! The pipeline is split into small layers:
//!
//! - [`brat`]: Brat standoff ingestion and overlap resolution.
//! - [`tokenizer`]: rule-based sentence/token segmentation and CoNLL I/O.
//! - [`iob`]: IOB2 projection of character spans onto tokens and back.
//! - [`crf`]: feature-based linear-chain CRF trained with L-BFGS.
//! - [`embeddings`]: word-vector tables (GloVe / word2vec text).
//! - [`neural`]: BiLSTM tagger with a softmax or CRF output head.
//! - [`metrics`]: token- and entity-level precision/recall/F1.
//! - [`synthetic`]: deterministic Brat corpus generator for data-free testing.

pub mod brat;
pub mod container;
pub mod crf;
pub mod embeddings;
pub mod iob;
pub mod metrics;
pub mod neural;
pub mod synthetic;
pub mod tokenizer;

pub use brat::{Corpus, Document, EntityAnnotation, EntityType, SpanFragment, Split};
pub use iob::{IobTag, TaggedSentence, TypedSpan};
pub use tokenizer::{Sentence, Token};
