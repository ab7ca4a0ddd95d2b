//! Brat standoff ingestion.
//!
//! A document is a `.txt` file plus a `.ann` file whose `T` lines carry typed
//! character-offset spans. Offsets are stored internally as Unicode scalar
//! (code point) indices; UTF-16 offsets can be converted at parse time.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::Sentence;

#[derive(Debug, Error)]
pub enum BratError {
    #[error("line {line}: malformed entity line: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unknown entity type `{label}`")]
    UnknownType { line: usize, label: String },
    #[error("line {line}: span {start}..{end} outside document of length {len}")]
    OffsetOutOfBounds {
        line: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("line {line}: surface of {id} is `{annotated}` but text has `{actual}`")]
    SurfaceMismatch {
        line: usize,
        id: String,
        annotated: String,
        actual: String,
    },
    #[error("line {line}: duplicate annotation id {id}")]
    DuplicateId { line: usize, id: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("document {doc_id}: {source}")]
    InDocument {
        doc_id: String,
        #[source]
        source: Box<BratError>,
    },
}

/// The four annotated mention types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityType {
    Disease,
    RareDisease,
    Sign,
    Symptom,
}

impl EntityType {
    pub const ALL: [EntityType; 4] = [
        EntityType::Disease,
        EntityType::RareDisease,
        EntityType::Sign,
        EntityType::Symptom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::Disease => "DISEASE",
            EntityType::RareDisease => "RAREDISEASE",
            EntityType::Sign => "SIGN",
            EntityType::Symptom => "SYMPTOM",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown entity type `{0}`")]
pub struct UnknownEntityType(pub String);

impl FromStr for EntityType {
    type Err = UnknownEntityType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "DISEASE" => Ok(EntityType::Disease),
            "RAREDISEASE" => Ok(EntityType::RareDisease),
            "SIGN" => Ok(EntityType::Sign),
            "SYMPTOM" => Ok(EntityType::Symptom),
            other => Err(UnknownEntityType(other.to_string())),
        }
    }
}

/// Half-open character range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpanFragment {
    pub start: usize,
    pub end: usize,
}

impl SpanFragment {
    pub fn new(start: usize, end: usize) -> Self {
        SpanFragment { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn intersects(&self, start: usize, end: usize) -> bool {
        self.start < end && start < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityAnnotation {
    pub id: String,
    pub entity_type: EntityType,
    /// Sorted by start, pairwise disjoint, never empty.
    pub fragments: Vec<SpanFragment>,
    pub surface: String,
}

impl EntityAnnotation {
    pub fn is_discontinuous(&self) -> bool {
        self.fragments.len() > 1
    }

    pub fn covered_len(&self) -> usize {
        self.fragments.iter().map(SpanFragment::len).sum()
    }

    pub fn start(&self) -> usize {
        self.fragments[0].start
    }

    pub fn end(&self) -> usize {
        self.fragments[self.fragments.len() - 1].end
    }

    pub fn overlaps(&self, other: &EntityAnnotation) -> bool {
        self.fragments.iter().any(|a| {
            other
                .fragments
                .iter()
                .any(|b| a.intersects(b.start, b.end))
        })
    }
}

/// A text with its entity layer. Offsets index Unicode scalar values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    text: String,
    /// Byte offset of every char, plus a trailing `text.len()`.
    char_bytes: Vec<usize>,
    pub entities: Vec<EntityAnnotation>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let mut char_bytes: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        char_bytes.push(text.len());
        Document {
            doc_id: doc_id.into(),
            text,
            char_bytes,
            entities: Vec::new(),
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Length in chars.
    pub fn char_len(&self) -> usize {
        self.char_bytes.len() - 1
    }

    /// Text between two char offsets. Panics when out of range.
    pub fn slice(&self, start: usize, end: usize) -> &str {
        &self.text[self.char_bytes[start]..self.char_bytes[end]]
    }

    /// Document text under the fragments, joined with single spaces.
    pub fn fragments_text(&self, fragments: &[SpanFragment]) -> String {
        fragments
            .iter()
            .map(|f| self.slice(f.start, f.end))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
    Unsplit,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub split: Split,
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn new(split: Split) -> Self {
        Corpus {
            split,
            documents: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OffsetUnit {
    #[default]
    CodePoint,
    Utf16,
}

#[derive(Debug, Clone, Default)]
pub struct BratOptions {
    /// Downgrade surface/offset mismatches to warnings.
    pub lenient: bool,
    pub offset_unit: OffsetUnit,
    /// Extra type labels accepted from `.ann` files.
    pub aliases: HashMap<String, EntityType>,
}

impl BratOptions {
    fn entity_type(&self, label: &str) -> Option<EntityType> {
        self.aliases
            .get(label)
            .copied()
            .or_else(|| label.parse().ok())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseWarning {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ParsedDocument {
    pub document: Document,
    pub warnings: Vec<ParseWarning>,
}

/// Parse one `.txt`/`.ann` pair.
pub fn parse_brat_pair(
    text_content: &str,
    ann_content: &str,
    doc_id: &str,
    options: &BratOptions,
) -> Result<ParsedDocument, BratError> {
    let mut document = Document::new(doc_id, text_content);
    let utf16_map = match options.offset_unit {
        OffsetUnit::CodePoint => None,
        OffsetUnit::Utf16 => Some(utf16_to_char_map(text_content)),
    };
    let mut warnings = Vec::new();
    let mut seen = HashSet::new();

    for (idx, raw) in ann_content.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim_end_matches('\r');
        if !raw.starts_with('T') {
            // relations, events, attributes, notes
            continue;
        }
        let mut fields = raw.splitn(3, '\t');
        let id = fields.next().unwrap_or_default();
        let (Some(body), Some(surface)) = (fields.next(), fields.next()) else {
            return Err(BratError::Malformed {
                line,
                message: "expected three tab-separated fields".into(),
            });
        };
        let (label, offsets) = body.split_once(' ').ok_or_else(|| BratError::Malformed {
            line,
            message: format!("missing offsets in `{body}`"),
        })?;
        let entity_type = options
            .entity_type(label)
            .ok_or_else(|| BratError::UnknownType {
                line,
                label: label.to_string(),
            })?;
        let mut fragments = parse_offsets(offsets, line)?;
        if let Some(map) = &utf16_map {
            for f in &mut fragments {
                f.start = map_utf16(map, f.start, line)?;
                f.end = map_utf16(map, f.end, line)?;
            }
        }
        fragments.sort();
        let len = document.char_len();
        for f in &fragments {
            if f.end > len {
                return Err(BratError::OffsetOutOfBounds {
                    line,
                    start: f.start,
                    end: f.end,
                    len,
                });
            }
        }
        if fragments.windows(2).any(|w| w[0].end > w[1].start) {
            return Err(BratError::Malformed {
                line,
                message: "fragments of one annotation overlap".into(),
            });
        }
        if !seen.insert(id.to_string()) {
            return Err(BratError::DuplicateId {
                line,
                id: id.to_string(),
            });
        }
        let actual = document.fragments_text(&fragments);
        if actual != surface {
            if options.lenient {
                warnings.push(ParseWarning {
                    line,
                    message: format!("surface of {id} is `{surface}` but text has `{actual}`"),
                });
            } else {
                return Err(BratError::SurfaceMismatch {
                    line,
                    id: id.to_string(),
                    annotated: surface.to_string(),
                    actual,
                });
            }
        }
        document.entities.push(EntityAnnotation {
            id: id.to_string(),
            entity_type,
            fragments,
            surface: actual,
        });
    }

    Ok(ParsedDocument {
        document,
        warnings,
    })
}

fn parse_offsets(offsets: &str, line: usize) -> Result<Vec<SpanFragment>, BratError> {
    let malformed = |message: String| BratError::Malformed { line, message };
    let mut out = Vec::new();
    for pair in offsets.split(';') {
        let mut parts = pair.split_whitespace();
        let (Some(s), Some(e), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(malformed(format!("bad offset pair `{pair}`")));
        };
        let start: usize = s
            .parse()
            .map_err(|_| malformed(format!("bad start offset `{s}`")))?;
        let end: usize = e
            .parse()
            .map_err(|_| malformed(format!("bad end offset `{e}`")))?;
        if start >= end {
            return Err(malformed(format!("empty or reversed span {start} {end}")));
        }
        out.push(SpanFragment { start, end });
    }
    Ok(out)
}

/// `map[u]` is the char index at UTF-16 unit `u`, or `usize::MAX` inside a
/// surrogate pair.
fn utf16_to_char_map(text: &str) -> Vec<usize> {
    let mut map = Vec::with_capacity(text.len() + 1);
    for (ci, ch) in text.chars().enumerate() {
        map.push(ci);
        if ch.len_utf16() == 2 {
            map.push(usize::MAX);
        }
    }
    map.push(text.chars().count());
    map
}

fn map_utf16(map: &[usize], unit: usize, line: usize) -> Result<usize, BratError> {
    match map.get(unit) {
        Some(&usize::MAX) => Err(BratError::Malformed {
            line,
            message: format!("offset {unit} splits a surrogate pair"),
        }),
        Some(&c) => Ok(c),
        None => Err(BratError::OffsetOutOfBounds {
            line,
            start: unit,
            end: unit,
            len: map.len() - 1,
        }),
    }
}

/// Write the entity layer back as Brat standoff.
pub fn to_ann(document: &Document) -> String {
    let mut out = String::new();
    for e in &document.entities {
        let offsets = e
            .fragments
            .iter()
            .map(|f| format!("{} {}", f.start, f.end))
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!(
            "{}\t{} {}\t{}\n",
            e.id,
            e.entity_type,
            offsets,
            document.fragments_text(&e.fragments)
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DroppedAnnotation {
    pub dropped: EntityAnnotation,
    /// Id of the kept annotation that won the conflict.
    pub kept_id: String,
}

#[derive(Debug, Clone)]
pub struct Resolved {
    pub document: Document,
    pub log: Vec<DroppedAnnotation>,
}

/// Make the entity layer non-overlapping at the character level.
///
/// Annotations are ranked by total covered length (longer first), then by
/// earlier start, then by lexicographically smaller id, and accepted greedily
/// unless they overlap an already accepted one. Kept entities come back
/// ordered by start offset.
pub fn resolve_overlaps(document: Document) -> Resolved {
    let Document {
        doc_id,
        text,
        char_bytes,
        entities,
    } = document;
    let mut ranked = entities;
    ranked.sort_by(|a, b| {
        b.covered_len()
            .cmp(&a.covered_len())
            .then(a.start().cmp(&b.start()))
            .then_with(|| a.id.cmp(&b.id))
    });
    let mut kept: Vec<EntityAnnotation> = Vec::with_capacity(ranked.len());
    let mut log = Vec::new();
    for candidate in ranked {
        match kept.iter().find(|k| k.overlaps(&candidate)) {
            Some(winner) => log.push(DroppedAnnotation {
                kept_id: winner.id.clone(),
                dropped: candidate,
            }),
            None => kept.push(candidate),
        }
    }
    kept.sort_by(|a, b| a.start().cmp(&b.start()).then_with(|| a.id.cmp(&b.id)));
    Resolved {
        document: Document {
            doc_id,
            text,
            char_bytes,
            entities: kept,
        },
        log,
    }
}

#[derive(Debug, Clone, Default)]
pub struct DirectoryLoad {
    pub documents: Vec<Document>,
    pub warnings: Vec<(String, ParseWarning)>,
    /// Files with no partner (`x.txt` without `x.ann` or vice versa).
    pub unpaired: Vec<PathBuf>,
}

/// Read every `<id>.txt`/`<id>.ann` pair in a directory, sorted by id.
pub fn load_brat_dir(dir: &Path, options: &BratOptions) -> Result<DirectoryLoad, BratError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| BratError::Io { path, source }
    };
    let mut txt = BTreeMap::new();
    let mut ann = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let (Some(stem), Some(ext)) = (
            path.file_stem().and_then(|s| s.to_str()),
            path.extension().and_then(|s| s.to_str()),
        ) else {
            continue;
        };
        match ext {
            "txt" => txt.insert(stem.to_string(), path.clone()),
            "ann" => ann.insert(stem.to_string(), path.clone()),
            _ => None,
        };
    }
    let mut unpaired: Vec<PathBuf> = txt
        .iter()
        .filter(|(k, _)| !ann.contains_key(*k))
        .chain(ann.iter().filter(|(k, _)| !txt.contains_key(*k)))
        .map(|(_, p)| p.clone())
        .collect();
    unpaired.sort();

    let pairs: Vec<(&String, &PathBuf, &PathBuf)> = txt
        .iter()
        .filter_map(|(id, t)| ann.get(id).map(|a| (id, t, a)))
        .collect();
    let parsed: Vec<Result<ParsedDocument, BratError>> = pairs
        .par_iter()
        .map(|(id, t, a)| {
            let text = fs::read_to_string(t).map_err(io_err(t))?;
            let annotations = fs::read_to_string(a).map_err(io_err(a))?;
            parse_brat_pair(&text, &annotations, id, options).map_err(|e| {
                BratError::InDocument {
                    doc_id: id.to_string(),
                    source: Box::new(e),
                }
            })
        })
        .collect();

    let mut out = DirectoryLoad {
        unpaired,
        ..Default::default()
    };
    for p in parsed {
        let p = p?;
        let id = p.document.doc_id.clone();
        out.warnings
            .extend(p.warnings.into_iter().map(|w| (id.clone(), w)));
        out.documents.push(p.document);
    }
    Ok(out)
}

/// Per-split counts of documents, sentences, tokens and entity mentions.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct CorpusStats {
    pub documents: usize,
    /// Present only when segmentation was supplied.
    pub sentences: Option<usize>,
    pub tokens: Option<usize>,
    pub entities: BTreeMap<EntityType, usize>,
}

impl CorpusStats {
    pub fn total_entities(&self) -> usize {
        self.entities.values().sum()
    }

    pub fn count(&self, t: EntityType) -> usize {
        self.entities.get(&t).copied().unwrap_or(0)
    }
}

/// Count mentions as annotated (before overlap resolution). `segmentation`
/// holds the sentences of each document, when available.
pub fn corpus_statistics(corpus: &Corpus, segmentation: Option<&[Vec<Sentence>]>) -> CorpusStats {
    let mut entities: BTreeMap<EntityType, usize> =
        EntityType::ALL.iter().map(|&t| (t, 0)).collect();
    for doc in &corpus.documents {
        for e in &doc.entities {
            *entities.entry(e.entity_type).or_default() += 1;
        }
    }
    let (sentences, tokens) = match segmentation {
        Some(docs) => (
            Some(docs.iter().map(Vec::len).sum()),
            Some(
                docs.iter()
                    .flat_map(|d| d.iter().map(|s| s.tokens.len()))
                    .sum(),
            ),
        ),
        None => (None, None),
    };
    CorpusStats {
        documents: corpus.documents.len(),
        sentences,
        tokens,
        entities,
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "documents\t{}", self.documents)?;
        if let Some(s) = self.sentences {
            writeln!(f, "sentences\t{s}")?;
        }
        if let Some(t) = self.tokens {
            writeln!(f, "tokens\t{t}")?;
        }
        for (t, n) in &self.entities {
            writeln!(f, "{t}\t{n}")?;
        }
        write!(f, "total\t{}", self.total_entities())
    }
}
