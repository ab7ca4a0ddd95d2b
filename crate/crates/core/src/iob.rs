//! IOB2 projection of character-offset entities onto tokens, and decoding of
//! tag sequences back into typed token spans.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::brat::{EntityAnnotation, EntityType};
use crate::tokenizer::{Sentence, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IobTag {
    O,
    B(EntityType),
    I(EntityType),
}

/// Number of tags in the closed IOB2 set.
pub const NUM_TAGS: usize = 9;

impl IobTag {
    /// Canonical label order: `O`, then `B-`/`I-` per entity type.
    pub const ALL: [IobTag; NUM_TAGS] = [
        IobTag::O,
        IobTag::B(EntityType::Disease),
        IobTag::I(EntityType::Disease),
        IobTag::B(EntityType::RareDisease),
        IobTag::I(EntityType::RareDisease),
        IobTag::B(EntityType::Sign),
        IobTag::I(EntityType::Sign),
        IobTag::B(EntityType::Symptom),
        IobTag::I(EntityType::Symptom),
    ];

    pub fn index(self) -> usize {
        match self {
            IobTag::O => 0,
            IobTag::B(t) => 1 + 2 * t.index(),
            IobTag::I(t) => 2 + 2 * t.index(),
        }
    }

    pub fn from_index(i: usize) -> Option<IobTag> {
        Self::ALL.get(i).copied()
    }

    pub fn entity_type(self) -> Option<EntityType> {
        match self {
            IobTag::O => None,
            IobTag::B(t) | IobTag::I(t) => Some(t),
        }
    }

    /// Whether `self` may directly follow `prev` (`None` = sentence start).
    pub fn may_follow(self, prev: Option<IobTag>) -> bool {
        match self {
            IobTag::I(t) => matches!(prev, Some(IobTag::B(p) | IobTag::I(p)) if p == t),
            _ => true,
        }
    }
}

impl fmt::Display for IobTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IobTag::O => f.write_str("O"),
            IobTag::B(t) => write!(f, "B-{t}"),
            IobTag::I(t) => write!(f, "I-{t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid IOB2 tag `{0}`")]
pub struct InvalidTag(pub String);

impl FromStr for IobTag {
    type Err = InvalidTag;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(IobTag::O);
        }
        let bad = || InvalidTag(s.to_string());
        let (prefix, ty) = s.split_once('-').ok_or_else(bad)?;
        let ty: EntityType = ty.parse().map_err(|_| bad())?;
        match prefix {
            "B" => Ok(IobTag::B(ty)),
            "I" => Ok(IobTag::I(ty)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedSentence {
    pub tokens: Vec<Token>,
    pub tags: Vec<IobTag>,
}

impl TaggedSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn sentence(&self) -> Sentence {
        Sentence {
            tokens: self.tokens.clone(),
            sent_index: 0,
        }
    }
}

/// Entity over tokens `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TypedSpan {
    pub entity_type: EntityType,
    pub start: usize,
    pub end: usize,
}

impl TypedSpan {
    pub fn new(entity_type: EntityType, start: usize, end: usize) -> Self {
        TypedSpan {
            entity_type,
            start,
            end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IobError {
    #[error("token {token} claimed by both {first} and {second}")]
    TokenConflict {
        token: usize,
        first: String,
        second: String,
    },
}

/// Tag a sentence from (overlap-resolved) entities.
///
/// A token is covered by an entity when its char range intersects any of the
/// entity's fragments. The first covered token of each entity gets `B-`, all
/// later covered tokens (across fragments) get `I-`. Fragments of a
/// discontinuous entity therefore lose their gap: the tokens after the gap
/// continue with `I-`.
pub fn encode(sentence: &Sentence, entities: &[EntityAnnotation]) -> Result<TaggedSentence, IobError> {
    let mut tags = vec![IobTag::O; sentence.len()];
    let mut owner: Vec<Option<&str>> = vec![None; sentence.len()];
    for entity in entities {
        let mut first = true;
        for (i, token) in sentence.tokens.iter().enumerate() {
            let covered = entity
                .fragments
                .iter()
                .any(|f| f.intersects(token.start, token.end));
            if !covered {
                continue;
            }
            if let Some(prev) = owner[i] {
                return Err(IobError::TokenConflict {
                    token: i,
                    first: prev.to_string(),
                    second: entity.id.clone(),
                });
            }
            owner[i] = Some(&entity.id);
            tags[i] = if first {
                IobTag::B(entity.entity_type)
            } else {
                IobTag::I(entity.entity_type)
            };
            first = false;
        }
    }
    Ok(TaggedSentence {
        tokens: sentence.tokens.clone(),
        tags,
    })
}

/// Tag sequence of length `len` for non-overlapping token spans.
pub fn encode_spans(len: usize, spans: &[TypedSpan]) -> Vec<IobTag> {
    let mut tags = vec![IobTag::O; len];
    for s in spans {
        tags[s.start] = IobTag::B(s.entity_type);
        for t in &mut tags[s.start + 1..s.end] {
            *t = IobTag::I(s.entity_type);
        }
    }
    tags
}

/// Extract maximal typed runs. Never fails: an `I-X` without a same-type
/// predecessor opens a new span, and `I-Y` after an `X` run closes it.
pub fn decode(tags: &[IobTag]) -> Vec<TypedSpan> {
    let mut spans = Vec::new();
    let mut open: Option<(EntityType, usize)> = None;
    for (i, &tag) in tags.iter().enumerate() {
        match tag {
            IobTag::O => {
                if let Some((t, s)) = open.take() {
                    spans.push(TypedSpan::new(t, s, i));
                }
            }
            IobTag::B(ty) => {
                if let Some((t, s)) = open.take() {
                    spans.push(TypedSpan::new(t, s, i));
                }
                open = Some((ty, i));
            }
            IobTag::I(ty) => match open {
                Some((t, _)) if t == ty => {}
                _ => {
                    if let Some((t, s)) = open.take() {
                        spans.push(TypedSpan::new(t, s, i));
                    }
                    open = Some((ty, i));
                }
            },
        }
    }
    if let Some((t, s)) = open {
        spans.push(TypedSpan::new(t, s, tags.len()));
    }
    spans
}

/// Positions holding an `I-X` with no `B-X`/`I-X` right before it.
pub fn validate(tags: &[IobTag]) -> Vec<usize> {
    tags.iter()
        .enumerate()
        .filter(|&(i, &tag)| !tag.may_follow(i.checked_sub(1).map(|p| tags[p])))
        .map(|(i, _)| i)
        .collect()
}
