//! Word-vector tables in GloVe / word2vec *text* format.
//!
//! Lines are `word v1 ... vd`, optionally preceded by a word2vec
//! `count dim` header. Binary word2vec files are not supported; convert them
//! to text first.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bound of the uniform distribution used for random vectors.
pub const INIT_RANGE: f64 = 0.25;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("line {line}: expected {expected} values, found {found}")]
    Dimension {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: bad number `{token}`")]
    Number { line: usize, token: String },
    #[error("empty embedding file")]
    Empty,
    #[error("empty vocabulary")]
    EmptyVocab,
    #[error("dimension must be positive")]
    ZeroDim,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OovPolicy {
    Zeros,
    #[default]
    RandomSeeded,
    MeanVector,
}

impl std::str::FromStr for OovPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zeros" => Ok(OovPolicy::Zeros),
            "random_seeded" | "random" => Ok(OovPolicy::RandomSeeded),
            "mean_vector" | "mean" => Ok(OovPolicy::MeanVector),
            other => Err(format!("unknown OOV policy `{other}`")),
        }
    }
}

#[derive(Debug)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    vocab: HashMap<String, usize>,
    matrix: Array2<f64>,
    pub oov_policy: OovPolicy,
    oov_seed: u64,
    oov_cache: Mutex<HashMap<String, Vec<f64>>>,
    /// Duplicate words skipped while loading.
    pub duplicates: usize,
    lookups: AtomicUsize,
    oov_lookups: AtomicUsize,
}

impl Clone for EmbeddingTable {
    fn clone(&self) -> Self {
        EmbeddingTable {
            dim: self.dim,
            words: self.words.clone(),
            vocab: self.vocab.clone(),
            matrix: self.matrix.clone(),
            oov_policy: self.oov_policy,
            oov_seed: self.oov_seed,
            oov_cache: Mutex::new(self.oov_cache.lock().expect("oov cache").clone()),
            duplicates: self.duplicates,
            lookups: AtomicUsize::new(self.lookups.load(Ordering::Relaxed)),
            oov_lookups: AtomicUsize::new(self.oov_lookups.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for EmbeddingTable {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.words == other.words
            && self.matrix == other.matrix
            && self.oov_policy == other.oov_policy
    }
}

impl EmbeddingTable {
    /// Table from parallel word and row lists; later duplicates are dropped.
    pub fn from_rows(words: Vec<String>, matrix: Array2<f64>) -> Result<Self, EmbeddingError> {
        if words.is_empty() {
            return Err(EmbeddingError::EmptyVocab);
        }
        if matrix.ncols() == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        assert_eq!(words.len(), matrix.nrows());
        let mut vocab = HashMap::with_capacity(words.len());
        let mut keep = Vec::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if !vocab.contains_key(w) {
                vocab.insert(w.clone(), keep.len());
                keep.push(i);
            }
        }
        let duplicates = words.len() - keep.len();
        let matrix = if duplicates == 0 {
            matrix
        } else {
            matrix.select(ndarray::Axis(0), &keep)
        };
        let words = keep.iter().map(|&i| words[i].clone()).collect();
        Ok(EmbeddingTable {
            dim: matrix.ncols(),
            words,
            vocab,
            matrix,
            oov_policy: OovPolicy::default(),
            oov_seed: 0,
            oov_cache: Mutex::new(HashMap::new()),
            duplicates,
            lookups: AtomicUsize::new(0),
            oov_lookups: AtomicUsize::new(0),
        })
    }

    pub fn with_oov(mut self, policy: OovPolicy, seed: u64) -> Self {
        self.oov_policy = policy;
        self.oov_seed = seed;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut Array2<f64> {
        &mut self.matrix
    }

    pub fn oov_seed(&self) -> u64 {
        self.oov_seed
    }

    /// Row of `word`: exact match first, then its lowercased form.
    pub fn row_index(&self, word: &str) -> Option<usize> {
        self.vocab
            .get(word)
            .or_else(|| self.vocab.get(&word.to_lowercase()))
            .copied()
    }

    /// Vector for `word`. Never fails: unknown words get the OOV policy's
    /// vector. Random OOV vectors are drawn from a generator seeded by the
    /// table seed and the word itself, then cached.
    pub fn lookup(&self, word: &str) -> Vec<f64> {
        self.lookups.fetch_add(1, Ordering::Relaxed);
        if let Some(i) = self.row_index(word) {
            return self.matrix.row(i).to_vec();
        }
        self.oov_lookups.fetch_add(1, Ordering::Relaxed);
        self.oov_vector(word)
    }

    pub fn oov_vector(&self, word: &str) -> Vec<f64> {
        match self.oov_policy {
            OovPolicy::Zeros => vec![0.0; self.dim],
            OovPolicy::MeanVector => self
                .matrix
                .mean_axis(ndarray::Axis(0))
                .expect("non-empty table")
                .to_vec(),
            OovPolicy::RandomSeeded => {
                let mut cache = self.oov_cache.lock().expect("oov cache");
                cache
                    .entry(word.to_string())
                    .or_insert_with(|| {
                        let mut rng = ChaCha8Rng::seed_from_u64(self.oov_seed ^ fnv1a(word));
                        (0..self.dim)
                            .map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE))
                            .collect()
                    })
                    .clone()
            }
        }
    }

    /// `(lookups, oov lookups)` since creation or the last reset.
    pub fn oov_counts(&self) -> (usize, usize) {
        (
            self.lookups.load(Ordering::Relaxed),
            self.oov_lookups.load(Ordering::Relaxed),
        )
    }

    pub fn oov_rate(&self) -> f64 {
        let (n, oov) = self.oov_counts();
        if n == 0 {
            0.0
        } else {
            oov as f64 / n as f64
        }
    }

    pub fn reset_counts(&self) {
        self.lookups.store(0, Ordering::Relaxed);
        self.oov_lookups.store(0, Ordering::Relaxed);
    }

    /// Write in GloVe text format with 6 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (w, row) in self.words.iter().zip(self.matrix.rows()) {
            out.push_str(w);
            for v in row {
                out.push_str(&format!(" {v:.5e}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn save_text_format(&self, path: &Path) -> Result<(), EmbeddingError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Parse GloVe or word2vec text. A first line of exactly two integers is
/// taken as a word2vec header.
pub fn parse_text_format<R: Read>(reader: R) -> Result<EmbeddingTable, EmbeddingError> {
    let reader = BufReader::new(reader);
    let mut dim: Option<usize> = None;
    let mut words = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else {
            continue;
        };
        let rest: Vec<&str> = fields.collect();
        if idx == 0 && rest.len() == 1 {
            if let (Ok(_), Ok(d)) = (word.parse::<usize>(), rest[0].parse::<usize>()) {
                dim = Some(d);
                continue;
            }
        }
        match dim {
            None => dim = Some(rest.len()),
            Some(d) if d != rest.len() => {
                return Err(EmbeddingError::Dimension {
                    line: lineno,
                    expected: d,
                    found: rest.len(),
                })
            }
            _ => {}
        }
        for tok in rest {
            values.push(tok.parse().map_err(|_| EmbeddingError::Number {
                line: lineno,
                token: tok.to_string(),
            })?);
        }
        words.push(word.to_string());
    }
    if words.is_empty() {
        return Err(EmbeddingError::Empty);
    }
    let dim = dim.unwrap_or(0);
    if dim == 0 {
        return Err(EmbeddingError::ZeroDim);
    }
    let matrix = Array2::from_shape_vec((words.len(), dim), values).expect("row lengths checked");
    EmbeddingTable::from_rows(words, matrix)
}

pub fn load_text_format(path: &Path) -> Result<EmbeddingTable, EmbeddingError> {
    parse_text_format(fs::File::open(path)?)
}

/// Uniform(-0.25, 0.25) vectors, deterministic in (vocab order, dim, seed).
pub fn random_table<S: AsRef<str>>(vocab: &[S], dim: usize, seed: u64) -> Result<EmbeddingTable, EmbeddingError> {
    if dim == 0 {
        return Err(EmbeddingError::ZeroDim);
    }
    if vocab.is_empty() {
        return Err(EmbeddingError::EmptyVocab);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let matrix = Array2::from_shape_simple_fn((vocab.len(), dim), || {
        rng.gen_range(-INIT_RANGE..INIT_RANGE)
    });
    let words = vocab.iter().map(|w| w.as_ref().to_string()).collect();
    Ok(EmbeddingTable::from_rows(words, matrix)?.with_oov(OovPolicy::RandomSeeded, seed))
}
