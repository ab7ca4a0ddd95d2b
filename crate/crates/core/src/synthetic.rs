//! Deterministic template-based corpus generator producing brat pairs.
//!
//! Each entity type draws from its own lexicon and no word appears in two
//! lexicons, so the labels are recoverable from surface forms alone.

use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::brat::{to_ann, Document, EntityAnnotation, EntityType, SpanFragment, Split};

const RARE_DISEASES: &[&str] = &[
    "Aldren syndrome",
    "Kallmorn dystrophy",
    "Velnar disease",
    "Torbek ataxia",
    "Prisman leukodystrophy",
    "Quendel syndrome",
    "Orvath myopathy",
    "Halvisk anemia",
    "Ystrel neuropathy",
    "Moraveth syndrome",
    "Brannic dysplasia",
    "Cithrel disease",
];

const DISEASES: &[&str] = &[
    "influenza",
    "pneumonia",
    "diabetes",
    "asthma",
    "hepatitis",
    "bronchitis",
    "tuberculosis",
    "measles",
];

const SIGNS: &[&str] = &[
    "hypotonia",
    "macrocephaly",
    "hepatomegaly",
    "scoliosis",
    "nystagmus",
    "microcephaly",
    "splenomegaly",
    "ptosis",
    "clubfoot",
];

const SYMPTOMS: &[&str] = &[
    "headache",
    "fatigue",
    "nausea",
    "dizziness",
    "itching",
    "insomnia",
    "palpitations",
];

/// Heads and tails of discontinuous signs, joined as
/// `"{head} and, in some cases, {tail}"`.
const DISCONTINUOUS_SIGNS: &[(&str, &str)] = &[
    ("stiffness of the elbows", "knees"),
    ("swelling of the hands", "feet"),
    ("tremor of the fingers", "toes"),
];

#[derive(Clone, Copy)]
enum Piece {
    Text(&'static str),
    Slot(EntityType),
}

use EntityType::{Disease as D, RareDisease as R, Sign as S, Symptom as Y};
use Piece::{Slot, Text};

const TEMPLATES: &[&[Piece]] = &[
    &[Slot(R), Text(" is a rare disorder characterized by "), Slot(S), Text(" and "), Slot(S), Text(".")],
    &[Text("Patients with "), Slot(R), Text(" often report "), Slot(Y), Text(".")],
    &[Text("A history of "), Slot(D), Text(" may precede the onset of "), Slot(R), Text(".")],
    &[Text("Affected individuals may develop "), Slot(S), Text(".")],
    &[Text("Some people also experience "), Slot(Y), Text(" and "), Slot(Y), Text(".")],
    &[Text("The condition is sometimes confused with "), Slot(D), Text(".")],
    &[Text("Most children show "), Slot(S), Text(" but not "), Slot(Y), Text(".")],
    &[Text("Treatment of "), Slot(R), Text(" focuses on the specific symptoms.")],
    &[Text("It is not related to "), Slot(D), Text(" or "), Slot(D), Text(".")],
    &[Text("The prognosis varies between families.")],
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    /// Number of documents across all splits.
    pub size: usize,
    /// Probability that a sentence is a discontinuous-sign sentence.
    pub discontinuous_fraction: f64,
    /// Probability that a rare-disease mention also carries a shorter,
    /// nested annotation of another type.
    pub overlap_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 7,
            size: 200,
            discontinuous_fraction: 0.1,
            overlap_fraction: 0.1,
        }
    }
}

fn lexicon(t: EntityType) -> &'static [&'static str] {
    match t {
        EntityType::Disease => DISEASES,
        EntityType::RareDisease => RARE_DISEASES,
        EntityType::Sign => SIGNS,
        EntityType::Symptom => SYMPTOMS,
    }
}

struct Builder {
    text: String,
    /// Length of `text` in chars.
    chars: usize,
    entities: Vec<EntityAnnotation>,
}

impl Builder {
    fn push(&mut self, s: &str) -> (usize, usize) {
        let start = self.chars;
        self.text.push_str(s);
        self.chars += s.chars().count();
        (start, self.chars)
    }

    fn annotate(&mut self, entity_type: EntityType, fragments: Vec<SpanFragment>, surface: String) {
        let id = format!("T{}", self.entities.len() + 1);
        self.entities.push(EntityAnnotation {
            id,
            entity_type,
            fragments,
            surface,
        });
    }
}

fn sentence(b: &mut Builder, rng: &mut ChaCha8Rng, cfg: &SyntheticConfig) {
    if rng.gen_bool(cfg.discontinuous_fraction.clamp(0.0, 1.0)) {
        let &(head, tail) = DISCONTINUOUS_SIGNS.choose(rng).expect("non-empty");
        b.push("Examination may reveal ");
        let (hs, he) = b.push(head);
        b.push(" and, in some cases, ");
        let (ts, te) = b.push(tail);
        b.push(".");
        b.annotate(
            EntityType::Sign,
            vec![SpanFragment::new(hs, he), SpanFragment::new(ts, te)],
            format!("{head} {tail}"),
        );
        return;
    }
    let template = TEMPLATES.choose(rng).expect("non-empty");
    for piece in template.iter() {
        match *piece {
            Text(s) => {
                b.push(s);
            }
            Slot(t) => {
                let word = *lexicon(t).choose(rng).expect("non-empty");
                let (s, e) = b.push(word);
                b.annotate(t, vec![SpanFragment::new(s, e)], word.to_string());
                let nested = t == EntityType::RareDisease
                    && rng.gen_bool(cfg.overlap_fraction.clamp(0.0, 1.0));
                if let (true, Some(space)) = (nested, word.rfind(' ')) {
                    let last = &word[space + 1..];
                    let ls = e - last.chars().count();
                    b.annotate(EntityType::Disease, vec![SpanFragment::new(ls, e)], last.to_string());
                }
            }
        }
    }
}

/// One document of 3 to 6 sentences; paragraphs are separated by blank lines.
pub fn generate_document(doc_id: &str, rng: &mut ChaCha8Rng, cfg: &SyntheticConfig) -> Document {
    let mut b = Builder {
        text: String::new(),
        chars: 0,
        entities: Vec::new(),
    };
    let n = rng.gen_range(3..=6);
    for i in 0..n {
        if i > 0 {
            b.push(if rng.gen_bool(0.2) { "\n\n" } else { " " });
        }
        sentence(&mut b, rng, cfg);
    }
    b.push("\n");
    let mut doc = Document::new(doc_id, b.text);
    doc.entities = b.entities;
    doc
}

/// Documents with their split: the first 70% train, next 10% validation,
/// rest test.
pub fn generate(cfg: &SyntheticConfig) -> Vec<(Split, Document)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_train = cfg.size * 7 / 10;
    let n_val = cfg.size / 10;
    (0..cfg.size)
        .map(|i| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
            let doc = generate_document(&format!("doc-{i:05}"), &mut rng, cfg);
            (split, doc)
        })
        .collect()
}

pub fn split_dir_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Validation => "validation",
        Split::Test => "test",
        Split::Unsplit => "all",
    }
}

/// Write `out/{train,validation,test}/<doc_id>.{txt,ann}`; returns the
/// number of documents written.
pub fn write_corpus(cfg: &SyntheticConfig, out: &Path) -> io::Result<usize> {
    let docs = generate(cfg);
    for split in [Split::Train, Split::Validation, Split::Test] {
        fs::create_dir_all(out.join(split_dir_name(split)))?;
    }
    for (split, doc) in &docs {
        let dir = out.join(split_dir_name(*split));
        fs::write(dir.join(format!("{}.txt", doc.doc_id)), doc.text())?;
        fs::write(dir.join(format!("{}.ann", doc.doc_id)), to_ann(doc))?;
    }
    Ok(docs.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brat::{parse_brat_pair, resolve_overlaps, BratOptions};

    #[test]
    fn lexicons_are_disjoint_by_word() {
        let mut seen = std::collections::HashMap::new();
        for t in EntityType::ALL {
            for entry in lexicon(t) {
                for w in entry.split(' ') {
                    if let Some(prev) = seen.insert(w.to_lowercase(), t) {
                        assert_eq!(prev, t, "`{w}` shared by two lexicons");
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic_and_parseable() {
        let cfg = SyntheticConfig {
            size: 10,
            discontinuous_fraction: 0.3,
            overlap_fraction: 0.5,
            ..Default::default()
        };
        let a = generate(&cfg);
        assert_eq!(a, generate(&cfg));
        assert_eq!(a.iter().filter(|d| d.0 == Split::Train).count(), 7);
        assert_eq!(a.iter().filter(|d| d.0 == Split::Validation).count(), 1);
        for (_, doc) in &a {
            let parsed = parse_brat_pair(doc.text(), &to_ann(doc), &doc.doc_id, &BratOptions::default()).unwrap();
            assert!(parsed.warnings.is_empty());
            assert_eq!(parsed.document.entities, doc.entities);
        }
    }

    #[test]
    fn zero_overlap_fraction_needs_no_resolution() {
        let cfg = SyntheticConfig {
            size: 30,
            overlap_fraction: 0.0,
            ..Default::default()
        };
        for (_, doc) in generate(&cfg) {
            assert!(resolve_overlaps(doc).log.is_empty());
        }
    }

    #[test]
    fn nested_annotations_lose_to_the_longer_span() {
        let cfg = SyntheticConfig {
            size: 30,
            overlap_fraction: 1.0,
            ..Default::default()
        };
        let mut dropped = 0;
        for (_, doc) in generate(&cfg) {
            for d in resolve_overlaps(doc).log {
                assert_eq!(d.dropped.entity_type, EntityType::Disease);
                dropped += 1;
            }
        }
        assert!(dropped > 0);
    }
}
