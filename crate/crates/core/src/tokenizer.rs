//! Rule-based sentence splitting and tokenization, plus CoNLL-style TSV I/O.
//!
//! All offsets are char (Unicode scalar) indices into the document text, the
//! same unit the Brat layer uses.

use thiserror::Error;

/// Fallback part-of-speech tag when no tagger output is available.
pub const FALLBACK_POS: &str = "X";

const ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "dr.", "mr.", "mrs.", "ms.", "prof.", "vs.", "etc.", "al.", "approx.", "fig.",
    "no.", "st.", "cf.", "ca.",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub start: usize,
    pub end: usize,
    pub lemma: String,
    pub pos: String,
}

impl Token {
    /// Token with fallback lemma (lowercased surface) and PoS.
    pub fn new(surface: impl Into<String>, start: usize) -> Self {
        let surface = surface.into();
        let end = start + surface.chars().count();
        Token {
            lemma: surface.to_lowercase(),
            pos: FALLBACK_POS.to_string(),
            surface,
            start,
            end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub sent_index: usize,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Char range `[start, end)` spanned by the tokens.
    pub fn char_range(&self) -> Option<(usize, usize)> {
        Some((self.tokens.first()?.start, self.tokens.last()?.end))
    }

    /// Sentence from bare surfaces, offsets synthesized by joining with single spaces.
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Self {
        let mut offset = 0;
        let tokens = words
            .iter()
            .map(|w| {
                let t = Token::new(w.as_ref(), offset);
                offset = t.end + 1;
                t
            })
            .collect();
        Sentence {
            tokens,
            sent_index: 0,
        }
    }
}

/// Char range of one sentence, trimmed of surrounding whitespace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SentenceSpan {
    pub start: usize,
    pub end: usize,
}

/// Sentence boundaries: a terminal `.`, `!` or `?` followed by whitespace and
/// an uppercase letter, or a blank line. Known abbreviations never split.
pub fn split_sentences(text: &str) -> Vec<SentenceSpan> {
    let chars: Vec<char> = text.chars().collect();
    let mut spans = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let cut = if matches!(c, '.' | '!' | '?') {
            terminal_boundary(&chars, i)
        } else if c == '\n' {
            blank_line_end(&chars, i).map(|_| i)
        } else {
            None
        };
        if let Some(end) = cut {
            push_trimmed(&chars, start, end, &mut spans);
            start = end;
        }
        i += 1;
    }
    push_trimmed(&chars, start, chars.len(), &mut spans);
    spans
}

fn terminal_boundary(chars: &[char], i: usize) -> Option<usize> {
    let mut j = i + 1;
    if j >= chars.len() || !chars[j].is_whitespace() {
        return None;
    }
    while j < chars.len() && chars[j].is_whitespace() {
        j += 1;
    }
    if j >= chars.len() || !chars[j].is_uppercase() {
        return None;
    }
    if c_is_abbreviation(chars, i) {
        return None;
    }
    Some(i + 1)
}

fn c_is_abbreviation(chars: &[char], period: usize) -> bool {
    if chars[period] != '.' {
        return false;
    }
    let mut s = period;
    while s > 0 && !chars[s - 1].is_whitespace() {
        s -= 1;
    }
    let word: String = chars[s..=period]
        .iter()
        .skip_while(|c| matches!(c, '(' | '[' | '"' | '\''))
        .collect::<String>()
        .to_lowercase();
    ABBREVIATIONS.contains(&word.as_str())
}

/// If a blank line starts at the newline `i`, the index just past it.
fn blank_line_end(chars: &[char], i: usize) -> Option<usize> {
    let mut j = i + 1;
    while j < chars.len() && chars[j].is_whitespace() && chars[j] != '\n' {
        j += 1;
    }
    (j < chars.len() && chars[j] == '\n').then_some(j)
}

fn push_trimmed(chars: &[char], start: usize, end: usize, out: &mut Vec<SentenceSpan>) {
    let mut s = start;
    let mut e = end;
    while s < e && chars[s].is_whitespace() {
        s += 1;
    }
    while e > s && chars[e - 1].is_whitespace() {
        e -= 1;
    }
    if s < e {
        out.push(SentenceSpan { start: s, end: e });
    }
}

fn is_split_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{201C}' | '\u{201D}' | '\u{2018}' | '\u{2019}' | '\u{00AB}' | '\u{00BB}' | '\u{2026}'
                | '\u{2013}' | '\u{2014}'
        )
}

/// Whitespace split, then leading and trailing punctuation become
/// single-char tokens. Internal punctuation (hyphens, dots) stays.
pub fn tokenize(sentence_text: &str, base_offset: usize) -> Vec<Token> {
    let chars: Vec<char> = sentence_text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let mut end = i;
        while end < chars.len() && !chars[end].is_whitespace() {
            end += 1;
        }
        let mut s = i;
        while s < end && is_split_punct(chars[s]) {
            tokens.push(Token::new(chars[s].to_string(), base_offset + s));
            s += 1;
        }
        let mut e = end;
        while e > s && is_split_punct(chars[e - 1]) {
            e -= 1;
        }
        if s < e {
            let word: String = chars[s..e].iter().collect();
            tokens.push(Token::new(word, base_offset + s));
        }
        for (k, &c) in chars.iter().enumerate().take(end).skip(e) {
            tokens.push(Token::new(c.to_string(), base_offset + k));
        }
        i = end;
    }
    tokens
}

/// Split and tokenize a whole document.
pub fn tokenize_document(text: &str) -> Vec<Sentence> {
    let chars: Vec<char> = text.chars().collect();
    split_sentences(text)
        .into_iter()
        .map(|span| {
            let piece: String = chars[span.start..span.end].iter().collect();
            tokenize(&piece, span.start)
        })
        .filter(|toks| !toks.is_empty())
        .enumerate()
        .map(|(sent_index, tokens)| Sentence { tokens, sent_index })
        .collect()
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConllError {
    #[error("line {line}: expected {expected} columns, found {found}")]
    Ragged {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: expected 3 or 4 tab-separated columns, found {found}")]
    ColumnCount { line: usize, found: usize },
    #[error("line {line}: empty field")]
    EmptyField { line: usize },
}

/// One sentence of a CoNLL file, with the raw tag column when present.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConllSentence {
    pub doc_id: Option<String>,
    /// Comment lines (without the leading `#`) preceding the sentence,
    /// excluding `doc_id`.
    pub comments: Vec<String>,
    pub sentence: Sentence,
    pub tags: Option<Vec<String>>,
}

const DOC_ID_PREFIX: &str = "doc_id = ";

/// Read `surface<TAB>lemma<TAB>pos[<TAB>tag]` lines; blank lines separate
/// sentences, `# doc_id = ...` lines set the document of what follows.
pub fn ingest_conll(content: &str) -> Result<Vec<ConllSentence>, ConllError> {
    let mut out = Vec::new();
    let mut columns: Option<usize> = None;
    let mut doc_id: Option<String> = None;
    let mut comments = Vec::new();
    let mut rows: Vec<(String, String, String, Option<String>)> = Vec::new();
    let mut sent_index = 0;

    let mut flush = |rows: &mut Vec<(String, String, String, Option<String>)>,
                     comments: &mut Vec<String>,
                     doc_id: &Option<String>,
                     sent_index: &mut usize| {
        if rows.is_empty() {
            return;
        }
        let mut offset = 0;
        let mut tokens = Vec::with_capacity(rows.len());
        let mut tags = Vec::with_capacity(rows.len());
        for (surface, lemma, pos, tag) in rows.drain(..) {
            let end = offset + surface.chars().count();
            tokens.push(Token {
                surface,
                start: offset,
                end,
                lemma,
                pos,
            });
            offset = end + 1;
            tags.extend(tag);
        }
        let tags = (tags.len() == tokens.len()).then_some(tags);
        out.push(ConllSentence {
            doc_id: doc_id.clone(),
            comments: std::mem::take(comments),
            sentence: Sentence {
                tokens,
                sent_index: *sent_index,
            },
            tags,
        });
        *sent_index += 1;
    };

    for (idx, raw) in content.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            flush(&mut rows, &mut comments, &doc_id, &mut sent_index);
            continue;
        }
        if raw.starts_with('#') && !raw.contains('\t') {
            flush(&mut rows, &mut comments, &doc_id, &mut sent_index);
            let body = raw.trim_start_matches('#').trim();
            match body.strip_prefix(DOC_ID_PREFIX) {
                Some(id) => {
                    doc_id = Some(id.trim().to_string());
                    sent_index = 0;
                }
                None => comments.push(body.to_string()),
            }
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(ConllError::ColumnCount {
                line,
                found: fields.len(),
            });
        }
        match columns {
            None => columns = Some(fields.len()),
            Some(expected) if expected != fields.len() => {
                return Err(ConllError::Ragged {
                    line,
                    expected,
                    found: fields.len(),
                })
            }
            _ => {}
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(ConllError::EmptyField { line });
        }
        rows.push((
            fields[0].to_string(),
            fields[1].to_string(),
            fields[2].to_string(),
            fields.get(3).map(|t| t.to_string()),
        ));
    }
    flush(&mut rows, &mut comments, &doc_id, &mut sent_index);
    Ok(out)
}

/// Inverse of [`ingest_conll`]. The tag column is written when present.
pub fn write_conll(sentences: &[ConllSentence]) -> String {
    let mut out = String::new();
    let mut current_doc: Option<&str> = None;
    for s in sentences {
        if let Some(id) = s.doc_id.as_deref() {
            if current_doc != Some(id) {
                out.push_str(&format!("# {DOC_ID_PREFIX}{id}\n"));
                current_doc = Some(id);
            }
        }
        for c in &s.comments {
            out.push_str(&format!("# {c}\n"));
        }
        for (i, t) in s.sentence.tokens.iter().enumerate() {
            out.push_str(&t.surface);
            out.push('\t');
            out.push_str(&t.lemma);
            out.push('\t');
            out.push_str(&t.pos);
            if let Some(tags) = &s.tags {
                out.push('\t');
                out.push_str(&tags[i]);
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}
